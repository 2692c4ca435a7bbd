#include "datml/corpus/io.hpp"

#include <fstream>
#include <sstream>

#include "datml/error.hpp"
#include "json.hpp"

namespace datml::inline DATML_ABI {

using nlohmann::json;

namespace {

json dialogue_to_json(const Dialogue& d) {
  json turns = json::array();
  for (const auto& t : d.turns) {
    json entities = json::array();
    for (const auto& e : t.entities) entities.push_back({{"slot", e.slot}, {"value", e.value}});
    turns.push_back({{"speaker", speaker_name(t.speaker)},
                     {"domain", t.domain},
                     {"text", t.text()},
                     {"entities", std::move(entities)}});
  }
  return {{"dialogue_id", d.id},
          {"domains", std::vector<std::string>(d.domains.begin(), d.domains.end())},
          {"turns", std::move(turns)}};
}

Dialogue dialogue_from_json(const json& j) {
  Dialogue d;
  d.id = j.at("dialogue_id").get<std::string>();
  for (const auto& dom : j.at("domains")) d.domains.insert(dom.get<std::string>());
  for (const auto& jt : j.at("turns")) {
    Turn t;
    t.speaker = parse_speaker(jt.at("speaker").get<std::string>());
    t.domain = jt.at("domain").get<std::string>();
    t.tokens = tokenize(jt.at("text").get<std::string>());
    if (jt.contains("entities")) {
      for (const auto& je : jt.at("entities")) {
        t.entities.insert({je.at("slot").get<std::string>(), je.at("value").get<std::string>()});
      }
    }
    d.turns.push_back(std::move(t));
  }
  validate_dialogue(d);
  return d;
}

}  // namespace

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& d : corpus) out << dialogue_to_json(d).dump() << '\n';
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      corpus.push_back(dialogue_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw InvalidArgument("corpus line " + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string(), "cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ostringstream out;
  write_corpus(out, corpus);
  write_file_atomic(path, out.str());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  try {
    return read_corpus(in);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

void save_knowledge_base(const std::filesystem::path& path, const KnowledgeBase& kb) {
  json j = json::object();
  for (const auto& [domain, rows] : kb.tables) {
    json arr = json::array();
    for (const auto& row : rows) arr.push_back(row);
    j[domain] = std::move(arr);
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

KnowledgeBase load_knowledge_base(const std::filesystem::path& path) {
  KnowledgeBase kb;
  try {
    const auto j = json::parse(read_file(path));
    for (const auto& [domain, rows] : j.items()) {
      auto& table = kb.tables[domain];
      for (const auto& row : rows) table.push_back(row.get<std::map<std::string, std::string>>());
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  validate_knowledge_base(kb);
  return kb;
}

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  write_file_atomic(path, json(vocab.tokens()).dump() + "\n");
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  try {
    return Vocabulary::from_tokens(json::parse(read_file(path)).get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

}  // namespace datml::inline DATML_ABI
