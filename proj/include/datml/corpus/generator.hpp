#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "datml/corpus/corpus.hpp"

namespace datml::inline DATML_ABI {

struct SlotDefinition {
  std::string name;
  std::vector<std::string> values;
};

/// One user/system exchange. Placeholders are `{slot}` for KB slots of the
/// domain or one of the shared free slots ({people}, {day}, {time}).
struct ExchangeTemplate {
  std::vector<std::string> user;
  std::vector<std::string> system;
};

/// The first slot identifies an entity and is unique within the KB. The first
/// exchange opens a dialogue, the last closes it; the rest are follow-ups.
struct DomainDefinition {
  std::string name;
  std::vector<SlotDefinition> slots;
  std::size_t kb_entities = 10;
  std::vector<ExchangeTemplate> exchanges;
};

struct CorpusSpec {
  std::vector<DomainDefinition> domains;
  std::size_t dialogues_per_domain = 100;
  double multi_domain_fraction = 0.0;
  std::size_t min_exchanges = 2;
  std::size_t max_exchanges = 4;
  std::uint64_t seed = 271;
};

/// Built-in domains: restaurant, hotel, attraction, cinema, spa. They share an
/// exchange structure but have disjoint value inventories.
std::vector<DomainDefinition> builtin_domains();
/// The first `count` built-in domains with the given sizes.
CorpusSpec default_corpus_spec(std::size_t domain_count = 4, std::size_t dialogues_per_domain = 150);

void validate_spec(const CorpusSpec& spec);

struct GeneratedCorpus {
  Corpus dialogues;
  KnowledgeBase kb;
};

/// Deterministic in spec.seed. Dialogue count is domains x dialogues_per_domain;
/// a multi-domain dialogue starts in its home domain and continues in another.
GeneratedCorpus generate_corpus(const CorpusSpec& spec);

}  // namespace datml::inline DATML_ABI
