#include "datml/corpus/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "datml/compute/random.hpp"
#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

const char* speaker_name(Speaker s) { return s == Speaker::kUser ? "usr" : "sys"; }

Speaker parse_speaker(const std::string& s) {
  if (s == "usr") return Speaker::kUser;
  if (s == "sys") return Speaker::kSystem;
  throw InvalidArgument("unknown speaker '" + s + "' (expected usr or sys)");
}

std::string Turn::text() const { return join_tokens(tokens); }

EntitySet KnowledgeBase::values(const std::string& domain) const {
  EntitySet out;
  auto it = tables.find(domain);
  if (it == tables.end()) return out;
  for (const auto& row : it->second) {
    for (const auto& [slot, value] : row) out.insert({slot, value});
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

namespace {

bool contains_subsequence(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

void validate_dialogue(const Dialogue& d) {
  const std::string where = "dialogue '" + d.id + "'";
  if (d.id.empty()) throw InvalidArgument("dialogue with an empty id");
  if (d.turns.empty()) throw InvalidArgument(where + " has no turns");
  if (d.turns.size() % 2 != 0) throw InvalidArgument(where + " has an odd number of turns");
  std::set<std::string> seen;
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    const auto& turn = d.turns[t];
    const Speaker expected = t % 2 == 0 ? Speaker::kUser : Speaker::kSystem;
    if (turn.speaker != expected) {
      throw InvalidArgument(where + ": turn " + std::to_string(t) + " should be spoken by " +
                            speaker_name(expected));
    }
    if (turn.domain.empty()) throw InvalidArgument(where + ": turn " + std::to_string(t) + " has no domain");
    seen.insert(turn.domain);
    for (const auto& e : turn.entities) {
      if (!contains_subsequence(turn.tokens, tokenize(e.value))) {
        throw InvalidArgument(where + ": entity value '" + e.value + "' does not occur in turn " +
                              std::to_string(t));
      }
    }
  }
  if (d.domains.empty()) throw InvalidArgument(where + " declares no domains");
  if (seen != d.domains) throw InvalidArgument(where + ": declared domains differ from turn domains");
}

void validate_knowledge_base(const KnowledgeBase& kb) {
  for (const auto& [domain, rows] : kb.tables) {
    std::set<std::string> slots;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::set<std::string> row_slots;
      for (const auto& [slot, value] : rows[i]) {
        if (value.empty()) throw InvalidArgument("kb domain '" + domain + "' has an empty value for '" + slot + "'");
        row_slots.insert(slot);
      }
      if (i == 0) {
        slots = row_slots;
      } else if (row_slots != slots) {
        throw InvalidArgument("kb domain '" + domain + "' has inconsistent slot names");
      }
    }
  }
}

EntitySet extract_entities(const std::vector<std::string>& tokens, const std::string& domain,
                           const KnowledgeBase& kb) {
  struct Candidate {
    std::vector<std::string> tokens;
    Entity entity;
  };
  std::vector<Candidate> candidates;
  for (const auto& e : kb.values(domain)) {
    auto vt = tokenize(e.value);
    if (!vt.empty()) candidates.push_back({std::move(vt), e});
  }
  // Longest first; ties keep (slot, value) order for determinism.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.tokens.size() > b.tokens.size(); });

  std::vector<std::string> lowered;
  lowered.reserve(tokens.size());
  for (const auto& t : tokens) {
    std::string l(t);
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
    lowered.push_back(std::move(l));
  }

  EntitySet out;
  std::size_t i = 0;
  while (i < lowered.size()) {
    const Candidate* match = nullptr;
    for (const auto& c : candidates) {
      if (c.tokens.size() > lowered.size() - i) continue;
      if (std::equal(c.tokens.begin(), c.tokens.end(), lowered.begin() + static_cast<std::ptrdiff_t>(i))) {
        match = &c;
        break;
      }
    }
    if (match) {
      out.insert(match->entity);
      i += match->tokens.size();
    } else {
      ++i;
    }
  }
  return out;
}

std::set<std::string> corpus_domains(const Corpus& corpus) {
  std::set<std::string> out;
  for (const auto& d : corpus) out.insert(d.domains.begin(), d.domains.end());
  return out;
}

TargetSplit split_for_target(const Corpus& corpus, const std::string& target_domain,
                             const SplitFractions& fractions, std::uint64_t seed) {
  const auto domains = corpus_domains(corpus);
  if (!domains.count(target_domain)) throw InvalidArgument("unknown target domain '" + target_domain + "'");
  if (fractions.validation < 0 || fractions.test < 0 || fractions.validation + fractions.test >= 1.0) {
    throw InvalidArgument("validation and test fractions must be non-negative and sum below 1");
  }
  TargetSplit split;
  Corpus target;
  for (const auto& d : corpus) {
    if (d.has_domain(target_domain)) {
      target.push_back(d);
    } else {
      split.source.push_back(d);
    }
  }
  if (corpus_domains(split.source).size() < 2) {
    throw InvalidArgument("holding out '" + target_domain + "' leaves fewer than 2 source domains");
  }
  Rng rng(derive_seed(seed, 0x5eed));
  shuffle(std::span<Dialogue>(target), rng);
  const auto n = target.size();
  const auto n_val = static_cast<std::size_t>(std::llround(fractions.validation * double(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(fractions.test * double(n)));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_val) {
      split.target_validation.push_back(std::move(target[i]));
    } else if (i < n_val + n_test) {
      split.target_test.push_back(std::move(target[i]));
    } else {
      split.target_train_pool.push_back(std::move(target[i]));
    }
  }
  return split;
}

Corpus sample_fewshot(const Corpus& pool, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("few-shot fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  if (pool.empty()) throw InvalidArgument("few-shot pool is empty");
  // Guard against 0.07 * 100 landing a hair above 7 in binary.
  const double exact = fraction * double(pool.size());
  auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  count = std::clamp<std::size_t>(count, 1, pool.size());
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());
  Corpus out;
  for (auto i : chosen) out.push_back(pool[i]);
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<unk>", "<s>", "</s>"}) push(s);
}

void Vocabulary::push(const std::string& token) {
  if (ids_.count(token)) return;
  ids_.emplace(token, tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<const Corpus*>& corpora) {
  Vocabulary v;
  for (const auto* corpus : corpora) {
    for (const auto& d : *corpus) {
      for (const auto& t : d.turns) {
        for (const auto& tok : t.tokens) v.push(tok);
      }
    }
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<unk>" || tokens[2] != "<s>" ||
      tokens[3] != "</s>") {
    throw InvalidArgument("vocabulary must start with <pad> <unk> <s> </s>");
  }
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw InvalidArgument("duplicate vocabulary token '" + tokens[i] + "'");
    v.push(tokens[i]);
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

}  // namespace datml::inline DATML_ABI
