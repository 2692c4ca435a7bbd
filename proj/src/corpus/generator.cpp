#include "datml/corpus/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "datml/compute/random.hpp"
#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

namespace {

const std::map<std::string, std::vector<std::string>>& free_slots() {
  static const std::map<std::string, std::vector<std::string>> slots = {
      {"people", {"two", "three", "four", "five", "six", "seven", "eight"}},
      {"day", {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}},
      {"time", {"noon", "six pm", "seven pm", "eight pm", "nine pm", "ten am", "eleven am"}},
  };
  return slots;
}

std::vector<std::string> placeholders(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string::npos) {
    const auto end = text.find('}', pos);
    if (end == std::string::npos) throw InvalidArgument("unterminated placeholder in template '" + text + "'");
    out.push_back(text.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

std::string fill(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find('{', pos);
    if (open == std::string::npos) {
      out += text.substr(pos);
      return out;
    }
    const auto close = text.find('}', open);
    out += text.substr(pos, open - pos);
    out += values.at(text.substr(open + 1, close - open - 1));
    pos = close + 1;
  }
}

const std::string& pick(const std::vector<std::string>& items, Rng& rng) {
  return items[static_cast<std::size_t>(uniform_index(rng, items.size()))];
}

ExchangeTemplate exchange(std::vector<std::string> user, std::vector<std::string> system) {
  return {std::move(user), std::move(system)};
}

}  // namespace

std::vector<DomainDefinition> builtin_domains() {
  std::vector<DomainDefinition> out;

  DomainDefinition restaurant;
  restaurant.name = "restaurant";
  restaurant.slots = {
      {"name", {"golden palace", "curry garden", "bella italia", "sala thong", "the nirala", "cote brasserie",
                "meze bar", "royal spice", "little seoul", "the copper kettle", "la mimosa", "rice boat"}},
      {"area", {"north", "south", "east", "west", "centre"}},
      {"food", {"chinese", "indian", "italian", "thai", "korean", "french", "mediterranean", "british"}},
      {"price", {"cheap", "moderate", "expensive"}},
  };
  restaurant.exchanges = {
      exchange({"i am looking for a {price} {food} restaurant in the {area} .",
                "can you find me a {food} restaurant in the {area} ? something {price} please .",
                "i want to eat {food} food in the {area} , {price} price range ."},
               {"{name} serves {food} food in the {area} and is {price} .",
                "how about {name} ? it is a {price} {food} restaurant in the {area} ."}),
      exchange({"please book a table at {name} for {people} people on {day} .",
                "can i reserve a table at {name} for {people} on {day} ?"},
               {"i have booked a table at {name} for {people} people on {day} .",
                "your table at {name} is reserved for {people} on {day} ."}),
      exchange({"is {name} in the {area} ?", "which part of town is {name} in ?"},
               {"{name} is located in the {area} .", "yes , {name} is in the {area} of town ."}),
      exchange({"what price range is {name} ?", "is {name} expensive ?"},
               {"{name} is in the {price} price range .", "{name} is {price} ."}),
      exchange({"thank you , that is all .", "great , thanks for your help ."},
               {"you are welcome . enjoy your meal !", "glad i could help . goodbye ."}),
  };
  out.push_back(std::move(restaurant));

  DomainDefinition hotel;
  hotel.name = "hotel";
  hotel.slots = {
      {"name", {"acorn guest house", "the lensfield", "alpha milton", "arbury lodge", "hamilton lodge",
                "the cambridge belfry", "avalon inn", "city stop", "finches lodge", "worth house",
                "el shaddai", "leverton house"}},
      {"area", {"riverside", "old town", "harbour", "uptown", "airport"}},
      {"stars", {"one star", "two star", "three star", "four star", "five star"}},
      {"price", {"budget", "standard", "luxury"}},
  };
  hotel.exchanges = {
      exchange({"i need a {price} {stars} hotel near the {area} .",
                "can you find me a {stars} hotel in the {area} ? something {price} please .",
                "i want to stay at a {stars} hotel near the {area} , {price} price range ."},
               {"{name} is a {stars} hotel near the {area} and is {price} .",
                "how about {name} ? it is a {price} {stars} hotel near the {area} ."}),
      exchange({"please book a room at {name} for {people} people on {day} .",
                "can i reserve a room at {name} for {people} on {day} ?"},
               {"i have booked a room at {name} for {people} people on {day} .",
                "your room at {name} is reserved for {people} on {day} ."}),
      exchange({"is {name} near the {area} ?", "which part of town is {name} near ?"},
               {"{name} is located near the {area} .", "yes , {name} is near the {area} ."}),
      exchange({"how many stars does {name} have ?", "is {name} a good hotel ?"},
               {"{name} is a {stars} hotel .", "{name} is rated {stars} ."}),
      exchange({"thank you , that is all .", "great , thanks for your help ."},
               {"you are welcome . enjoy your stay !", "glad i could help . goodbye ."}),
  };
  out.push_back(std::move(hotel));

  DomainDefinition attraction;
  attraction.name = "attraction";
  attraction.slots = {
      {"name", {"kettles yard", "the fitzwilliam", "whipple museum", "castle galleries", "botanic garden",
                "jesus green", "the junction", "mumford theatre", "byard art", "scott polar", "abbey pool",
                "broughton house"}},
      {"area", {"market square", "castle hill", "docklands", "parkside", "university quarter"}},
      {"type", {"museum", "gallery", "park", "theatre", "swimming pool", "architecture"}},
      {"price", {"free", "low cost", "premium"}},
  };
  attraction.exchanges = {
      exchange({"i am looking for a {price} {type} to visit in {area} .",
                "can you find me a {type} in {area} ? something {price} please .",
                "i want to see a {type} around {area} , {price} entrance ."},
               {"{name} is a {type} in {area} and entrance is {price} .",
                "how about {name} ? it is a {price} {type} in {area} ."}),
      exchange({"please get tickets for {name} for {people} people on {day} .",
                "can i buy tickets for {name} for {people} on {day} ?"},
               {"i have booked tickets for {name} for {people} people on {day} .",
                "your tickets for {name} are reserved for {people} on {day} ."}),
      exchange({"is {name} in {area} ?", "which part of town is {name} in ?"},
               {"{name} is located in {area} .", "yes , {name} is in {area} ."}),
      exchange({"what kind of place is {name} ?", "what is {name} ?"},
               {"{name} is a {type} .", "{name} is a popular {type} ."}),
      exchange({"thank you , that is all .", "great , thanks for your help ."},
               {"you are welcome . enjoy your visit !", "glad i could help . goodbye ."}),
  };
  out.push_back(std::move(attraction));

  DomainDefinition cinema;
  cinema.name = "cinema";
  cinema.slots = {
      {"name", {"the arts picturehouse", "vue grafton", "cineworld leisure", "the light", "regal screens",
                "the odeon", "film house", "starlight cinema", "the roxy", "plaza screens", "moonlight films",
                "the electric"}},
      {"area", {"high street", "station road", "mill lane", "the arcade", "bridge street"}},
      {"genre", {"comedy", "horror", "drama", "animation", "documentary", "science fiction"}},
      {"price", {"discount", "regular", "deluxe"}},
  };
  cinema.exchanges = {
      exchange({"i am looking for a {price} cinema showing {genre} on {area} .",
                "can you find me a cinema on {area} with {genre} films ? something {price} please .",
                "i want to watch a {genre} film near {area} , {price} seats ."},
               {"{name} shows {genre} films on {area} and seats are {price} .",
                "how about {name} ? it is a {price} cinema on {area} showing {genre} ."}),
      exchange({"please get seats at {name} for {people} people on {day} .",
                "can i reserve seats at {name} for {people} on {day} ?"},
               {"i have booked seats at {name} for {people} people on {day} .",
                "your seats at {name} are reserved for {people} on {day} ."}),
      exchange({"is {name} on {area} ?", "where is {name} ?"},
               {"{name} is located on {area} .", "yes , {name} is on {area} ."}),
      exchange({"what films does {name} show ?", "does {name} show {genre} ?"},
               {"{name} mostly shows {genre} .", "{name} shows {genre} films ."}),
      exchange({"thank you , that is all .", "great , thanks for your help ."},
               {"you are welcome . enjoy the film !", "glad i could help . goodbye ."}),
  };
  out.push_back(std::move(cinema));

  DomainDefinition spa;
  spa.name = "spa";
  spa.slots = {
      {"name", {"serenity rooms", "lotus retreat", "the bath house", "willow wellness", "calm waters",
                "the steam room", "blue lagoon spa", "harmony studio", "the sanctuary", "zen garden spa"}},
      {"area", {"lakeside", "hillcrest", "meadow view", "elm gate", "the quay"}},
      {"treatment", {"massage", "facial", "sauna", "hot stone", "aromatherapy"}},
      {"price", {"basic", "signature", "exclusive"}},
  };
  spa.exchanges = {
      exchange({"i am looking for a {price} spa offering {treatment} at {area} .",
                "can you find me a spa at {area} with {treatment} ? something {price} please ."},
               {"{name} offers {treatment} at {area} and is {price} .",
                "how about {name} ? it is a {price} spa at {area} offering {treatment} ."}),
      exchange({"please book {name} for {people} people on {day} at {time} .",
                "can i book {name} for {people} on {day} ?"},
               {"i have booked {name} for {people} people on {day} .",
                "your visit to {name} is reserved for {people} on {day} ."}),
      exchange({"is {name} at {area} ?", "where is {name} ?"},
               {"{name} is located at {area} .", "yes , {name} is at {area} ."}),
      exchange({"thank you , that is all .", "great , thanks for your help ."},
               {"you are welcome . enjoy your treatment !", "glad i could help . goodbye ."}),
  };
  out.push_back(std::move(spa));

  return out;
}

CorpusSpec default_corpus_spec(std::size_t domain_count, std::size_t dialogues_per_domain) {
  auto all = builtin_domains();
  if (domain_count > all.size()) {
    throw InvalidArgument("only " + std::to_string(all.size()) + " built-in domains are available");
  }
  CorpusSpec spec;
  spec.domains.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(domain_count));
  spec.dialogues_per_domain = dialogues_per_domain;
  return spec;
}

void validate_spec(const CorpusSpec& spec) {
  if (spec.domains.size() < 3) {
    throw InvalidArgument("corpus spec needs at least 3 domains (2 source + 1 target), got " +
                          std::to_string(spec.domains.size()));
  }
  if (spec.dialogues_per_domain == 0) throw InvalidArgument("dialogues_per_domain must be positive");
  if (spec.multi_domain_fraction < 0.0 || spec.multi_domain_fraction > 1.0) {
    throw InvalidArgument("multi_domain_fraction must lie in [0, 1]");
  }
  if (spec.min_exchanges < 2 || spec.min_exchanges > spec.max_exchanges) {
    throw InvalidArgument("exchange range must satisfy 2 <= min <= max");
  }
  std::set<std::string> names;
  std::map<std::string, std::string> value_owner;
  for (const auto& d : spec.domains) {
    if (d.name.empty()) throw InvalidArgument("domain with an empty name");
    if (!names.insert(d.name).second) throw InvalidArgument("duplicate domain '" + d.name + "'");
    if (d.slots.empty()) throw InvalidArgument("domain '" + d.name + "' declares no slots");
    if (d.exchanges.size() < 2) throw InvalidArgument("domain '" + d.name + "' needs opening and closing exchanges");
    if (spec.max_exchanges > d.exchanges.size()) {
      throw InvalidArgument("domain '" + d.name + "' has fewer exchanges than max_exchanges");
    }
    if (d.kb_entities == 0 || d.kb_entities > d.slots[0].values.size()) {
      throw InvalidArgument("domain '" + d.name + "' cannot draw " + std::to_string(d.kb_entities) +
                            " distinct entities");
    }
    std::set<std::string> slot_names;
    for (const auto& s : d.slots) {
      if (free_slots().count(s.name)) throw InvalidArgument("slot '" + s.name + "' shadows a free slot");
      if (!slot_names.insert(s.name).second) throw InvalidArgument("duplicate slot '" + s.name + "'");
      if (s.values.empty()) throw InvalidArgument("slot '" + s.name + "' has no values");
      for (const auto& v : s.values) {
        if (v.empty()) throw InvalidArgument("slot '" + s.name + "' has an empty value");
        const std::string owner = d.name + "." + s.name;
        auto [it, fresh] = value_owner.emplace(v, owner);
        if (!fresh && it->second != owner) {
          throw InvalidArgument("value '" + v + "' is shared by " + it->second + " and " + owner);
        }
      }
    }
    for (const auto& ex : d.exchanges) {
      if (ex.user.empty() || ex.system.empty()) {
        throw InvalidArgument("domain '" + d.name + "' has an exchange without variants");
      }
      for (const auto* side : {&ex.user, &ex.system}) {
        for (const auto& text : *side) {
          for (const auto& p : placeholders(text)) {
            if (!slot_names.count(p) && !free_slots().count(p)) {
              throw InvalidArgument("template '" + text + "' references undeclared slot '" + p + "'");
            }
          }
        }
      }
    }
  }
}

namespace {

using Row = std::map<std::string, std::string>;

std::vector<Row> build_table(const DomainDefinition& d, Rng& rng) {
  std::vector<std::string> names = d.slots[0].values;
  shuffle(std::span<std::string>(names), rng);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < d.kb_entities; ++i) {
    Row row;
    row[d.slots[0].name] = names[i];
    for (std::size_t s = 1; s < d.slots.size(); ++s) row[d.slots[s].name] = pick(d.slots[s].values, rng);
    rows.push_back(std::move(row));
  }
  return rows;
}

void append_exchange(Dialogue& dialogue, const DomainDefinition& d, const ExchangeTemplate& ex,
                     const std::map<std::string, std::string>& values, const KnowledgeBase& kb, Rng& rng) {
  Turn usr;
  usr.speaker = Speaker::kUser;
  usr.domain = d.name;
  usr.tokens = tokenize(fill(pick(ex.user, rng), values));
  Turn sys;
  sys.speaker = Speaker::kSystem;
  sys.domain = d.name;
  sys.tokens = tokenize(fill(pick(ex.system, rng), values));
  sys.entities = extract_entities(sys.tokens, d.name, kb);
  dialogue.turns.push_back(std::move(usr));
  dialogue.turns.push_back(std::move(sys));
}

std::map<std::string, std::string> sample_values(const Row& entity, Rng& rng) {
  std::map<std::string, std::string> values(entity.begin(), entity.end());
  for (const auto& [slot, inventory] : free_slots()) values[slot] = pick(inventory, rng);
  return values;
}

/// Opening, then `count - 2` follow-ups in template order, then closing. With
/// `close` false the closing exchange is replaced by one more follow-up.
std::vector<std::size_t> plan_exchanges(const DomainDefinition& d, std::size_t count, bool close, Rng& rng) {
  const std::size_t middle_total = d.exchanges.size() - 2;
  std::size_t middle = close ? count - 2 : count - 1;
  middle = std::min(middle, middle_total);
  std::vector<std::size_t> pool(middle_total);
  for (std::size_t i = 0; i < middle_total; ++i) pool[i] = i + 1;
  shuffle(std::span<std::size_t>(pool), rng);
  std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(middle));
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::size_t> plan{0};
  plan.insert(plan.end(), chosen.begin(), chosen.end());
  if (close) plan.push_back(d.exchanges.size() - 1);
  return plan;
}

}  // namespace

GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);
  GeneratedCorpus out;
  for (const auto& d : spec.domains) out.kb.tables[d.name] = build_table(d, rng);

  const auto multi_count = static_cast<std::size_t>(
      std::llround(spec.multi_domain_fraction * double(spec.dialogues_per_domain)));
  for (std::size_t di = 0; di < spec.domains.size(); ++di) {
    const auto& home = spec.domains[di];
    for (std::size_t n = 0; n < spec.dialogues_per_domain; ++n) {
      Dialogue dialogue;
      char id[32];
      std::snprintf(id, sizeof id, "%04zu", n);
      dialogue.id = home.name + "-" + id;
      const std::size_t span = spec.max_exchanges - spec.min_exchanges + 1;
      const std::size_t count = spec.min_exchanges + static_cast<std::size_t>(uniform_index(rng, span));
      const bool multi = n < multi_count;

      const auto& home_rows = out.kb.tables.at(home.name);
      const auto values = sample_values(home_rows[uniform_index(rng, home_rows.size())], rng);
      for (auto e : plan_exchanges(home, count, !multi, rng)) {
        append_exchange(dialogue, home, home.exchanges[e], values, out.kb, rng);
      }
      if (multi) {
        auto other = static_cast<std::size_t>(uniform_index(rng, spec.domains.size() - 1));
        if (other >= di) ++other;
        const auto& second = spec.domains[other];
        const auto& rows = out.kb.tables.at(second.name);
        const auto second_values = sample_values(rows[uniform_index(rng, rows.size())], rng);
        append_exchange(dialogue, second, second.exchanges.front(), second_values, out.kb, rng);
        append_exchange(dialogue, second, second.exchanges.back(), second_values, out.kb, rng);
      }
      for (const auto& t : dialogue.turns) dialogue.domains.insert(t.domain);
      out.dialogues.push_back(std::move(dialogue));
    }
  }
  return out;
}

}  // namespace datml::inline DATML_ABI
