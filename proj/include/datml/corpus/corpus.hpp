#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "datml/compute/scalar.hpp"

namespace datml::inline DATML_ABI {

enum class Speaker { kUser, kSystem };

const char* speaker_name(Speaker s);
Speaker parse_speaker(const std::string& s);

struct Entity {
  std::string slot;
  std::string value;

  auto operator<=>(const Entity&) const = default;
};

using EntitySet = std::set<Entity>;

struct Turn {
  Speaker speaker = Speaker::kUser;
  std::vector<std::string> tokens;
  EntitySet entities;
  std::string domain;

  std::string text() const;
};

/// For turn t, the context is every turn before t.
struct Dialogue {
  std::string id;
  std::set<std::string> domains;
  std::vector<Turn> turns;

  bool has_domain(const std::string& d) const { return domains.count(d) != 0; }
};

using Corpus = std::vector<Dialogue>;

/// Per-domain entity tables; each entity maps slot name to surface value.
struct KnowledgeBase {
  std::map<std::string, std::vector<std::map<std::string, std::string>>> tables;

  bool has_domain(const std::string& d) const { return tables.count(d) != 0; }
  /// Distinct (slot, value) pairs of one domain.
  EntitySet values(const std::string& domain) const;
};

/// Lowercase; whitespace separates tokens and each punctuation character is a
/// token of its own.
std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

/// Checks the Turn, Dialogue and KnowledgeBase invariants; throws
/// InvalidArgument describing the first violation.
void validate_dialogue(const Dialogue& d);
void validate_knowledge_base(const KnowledgeBase& kb);

/// Every KB value of `domain` occurring in `tokens` at token boundaries,
/// case-insensitively. Overlaps resolve longest match first, left to right.
EntitySet extract_entities(const std::vector<std::string>& tokens, const std::string& domain,
                           const KnowledgeBase& kb);

// --- splitting and sampling -------------------------------------------------

struct SplitFractions {
  double validation = 0.10;
  double test = 0.30;
};

struct TargetSplit {
  Corpus source;
  Corpus target_train_pool;
  Corpus target_validation;
  Corpus target_test;
};

/// Holds out every dialogue that has any turn in `target_domain`, then splits
/// those into disjoint train/validation/test pools.
TargetSplit split_for_target(const Corpus& corpus, const std::string& target_domain,
                             const SplitFractions& fractions, std::uint64_t seed);

inline constexpr std::uint64_t kDefaultFewShotSeed = 271;

/// ceil(fraction * pool size) dialogues drawn uniformly without replacement,
/// returned in pool order.
Corpus sample_fewshot(const Corpus& pool, double fraction, std::uint64_t seed = kDefaultFewShotSeed);

std::set<std::string> corpus_domains(const Corpus& corpus);

// --- vocabulary -------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;

  Vocabulary();
  /// Every token of every turn, in first-seen order after the specials.
  static Vocabulary build(const std::vector<const Corpus*>& corpora);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

}  // namespace datml::inline DATML_ABI
