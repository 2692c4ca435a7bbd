#include "datml/eval/eval.hpp"

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "datml/compute/layers.hpp"
#include "datml/error.hpp"
#include "json.hpp"

namespace datml::inline DATML_ABI {

const char* const kBleuConvention =
    "corpus BLEU-4 over per-turn pairs, brevity penalty, add-one estimate for n-gram orders without matches";

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[Sentence(s.begin() + i, s.begin() + i + n)];
  return out;
}

}  // namespace

double bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references) {
  if (candidates.size() != references.size()) {
    throw InvalidArgument("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                          std::to_string(references.size()) + " references");
  }
  constexpr std::size_t kOrder = 4;
  std::size_t matched[kOrder] = {}, total[kOrder] = {};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += candidates[i].size();
    ref_len += references[i].size();
    for (std::size_t n = 1; n <= kOrder; ++n) {
      const auto c = ngrams(candidates[i], n);
      const auto r = ngrams(references[i], n);
      for (const auto& [g, count] : c) {
        total[n - 1] += count;
        auto it = r.find(g);
        if (it != r.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < kOrder; ++n) {
    const double p = matched[n] > 0 ? double(matched[n]) / double(total[n]) : 1.0 / double(total[n] + 1);
    log_p += std::log(p) / double(kOrder);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - double(ref_len) / double(cand_len));
  return bp * std::exp(log_p);
}

EntityScores entity_f1(const std::vector<EntitySet>& predicted, const std::vector<EntitySet>& gold) {
  if (predicted.size() != gold.size()) {
    throw InvalidArgument("entity_f1: " + std::to_string(predicted.size()) + " predicted vs " +
                          std::to_string(gold.size()) + " gold turns");
  }
  EntityScores s;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    s.predicted += predicted[i].size();
    s.gold += gold[i].size();
    for (const auto& e : predicted[i]) s.correct += gold[i].count(e);
  }
  const bool both_empty = s.predicted == 0 && s.gold == 0;
  s.precision = s.predicted > 0 ? double(s.correct) / double(s.predicted) : (both_empty ? 1.0 : 0.0);
  s.recall = s.gold > 0 ? double(s.correct) / double(s.gold) : (both_empty ? 1.0 : 0.0);
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double percent(double score) { return std::round(score * 1000.0) / 10.0; }

std::size_t eval_threads_from_env() {
  const char* v = std::getenv("DATML_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw InvalidArgument(std::string("DATML_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

EvalReport evaluate_responses(const Responder& respond, const Corpus& test, const KnowledgeBase& kb,
                              const EvalOptions& options) {
  struct Job {
    const Dialogue* dialogue;
    std::size_t turn;
  };
  std::vector<Job> jobs;
  for (const auto& d : test) {
    for (std::size_t i = 1; i < d.turns.size(); i += 2) jobs.push_back({&d, i});
  }
  if (jobs.empty()) throw InvalidArgument("evaluate_model: test set has no system turns");

  std::vector<Sentence> generated(jobs.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t j = begin; j < jobs.size(); j += step) generated[j] = respond(*jobs[j].dialogue, jobs[j].turn);
  };
  const std::size_t threads = std::min(options.threads ? options.threads : eval_threads_from_env(), jobs.size());
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }

  std::vector<Sentence> references;
  std::vector<EntitySet> predicted, gold;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& turn = jobs[j].dialogue->turns[jobs[j].turn];
    references.push_back(turn.tokens);
    gold.push_back(turn.entities);
    predicted.push_back(extract_entities(generated[j], turn.domain, kb));
  }
  const auto ent = entity_f1(predicted, gold);
  DomainScores row;
  row.domain = options.domain;
  row.bleu = percent(bleu(generated, references));
  row.entity_f1 = percent(ent.f1);
  row.turns = jobs.size();
  row.gold_entities = ent.gold;
  row.predicted_entities = ent.predicted;
  row.correct_entities = ent.correct;

  EvalReport report;
  report.domains.push_back(row);
  report.fingerprint = options.fingerprint;
  report.fewshot_fraction = options.fewshot_fraction;
  report.bleu_convention = kBleuConvention;
  return report;
}

EvalReport evaluate_model(const HredModel& model, const ParamSet& params, const TurnEncoder& encoder,
                          const Corpus& test, const KnowledgeBase& kb, const EvalOptions& options) {
  const ParamSet frozen = detached(params);
  return evaluate_responses(
      [&](const Dialogue& d, std::size_t turn) {
        const auto ex = encoder.encode(d, turn);
        return example_tokens(ex, *encoder.vocab, generate_response(model, frozen, ex, options.max_len));
      },
      test, kb, options);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["fingerprint"] = fingerprint;
  j["few_shot_fraction"] = fewshot_fraction;
  j["bleu_convention"] = bleu_convention;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& d : domains) {
    nlohmann::ordered_json r;
    r["domain"] = d.domain;
    r["bleu"] = d.bleu;
    r["entity_f1"] = d.entity_f1;
    r["turns"] = d.turns;
    r["entities"] = {{"gold", d.gold_entities}, {"predicted", d.predicted_entities}, {"correct", d.correct_entities}};
    rows.push_back(std::move(r));
  }
  j["domains"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  std::size_t width = 6;
  for (const auto& d : domains) width = std::max(width, d.domain.size());
  std::ostringstream out;
  out << std::left << std::setw(int(width)) << "domain" << std::right << std::setw(9) << "BLEU %" << std::setw(14)
      << "Entity F1 %" << std::setw(8) << "turns" << "\n";
  out << std::fixed << std::setprecision(1);
  for (const auto& d : domains) {
    out << std::left << std::setw(int(width)) << d.domain << std::right << std::setw(9) << d.bleu << std::setw(14)
        << d.entity_f1 << std::setw(8) << d.turns << "\n";
  }
  return out.str();
}

}  // namespace datml::inline DATML_ABI
