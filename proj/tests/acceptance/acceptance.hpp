#pragma once

#include <string>

namespace acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Double-precision checks, compiled against datml_f64.
Outcome gradients();
Outcome reptile_algebra();
Outcome fomaml_algebra();
Outcome laed_enumeration();
Outcome latent_degeneracy();

// Single-precision checks and the pipeline.
Outcome leakage();
Outcome metrics();
Outcome adaptation(const std::string& source_dir);
Outcome determinism(const std::string& source_dir);

}  // namespace acceptance
