#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "datml/corpus/corpus.hpp"

namespace datml::inline DATML_ABI {

/// One dialogue per line:
/// {"dialogue_id", "domains", "turns": [{"speaker", "domain", "text", "entities": [{"slot", "value"}]}]}
void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& path);

/// {domain: [{slot: value, ...}, ...]}
void save_knowledge_base(const std::filesystem::path& path, const KnowledgeBase& kb);
KnowledgeBase load_knowledge_base(const std::filesystem::path& path);

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace datml::inline DATML_ABI
