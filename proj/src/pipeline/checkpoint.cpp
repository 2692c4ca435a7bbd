#include "datml/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "datml/corpus/io.hpp"
#include "json.hpp"

namespace datml::inline DATML_ABI {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");

namespace {

std::filesystem::path with_suffix(std::filesystem::path p, const char* suffix) {
  p += suffix;
  return p;
}

}  // namespace

bool checkpoint_exists(const std::filesystem::path& path) {
  return std::filesystem::exists(with_suffix(path, ".json"));
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const std::string& kind,
                     const std::string& fingerprint, const std::string& config_json) {
  const auto manifest_path = with_suffix(path, ".json");
  const auto payload_path = with_suffix(path, ".bin");
  nlohmann::ordered_json m;
  m["format"] = 1;
  m["kind"] = kind;
  m["fingerprint"] = fingerprint;
  m["config"] = nlohmann::ordered_json::parse(config_json.empty() ? "{}" : config_json);
  m["payload"] = payload_path.filename().string();
  std::string payload;
  auto records = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params) {
    records.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    for (Scalar v : t.data()) {
      const float f = static_cast<float>(v);
      char bytes[4];
      std::memcpy(bytes, &f, 4);
      payload.append(bytes, 4);
    }
  }
  m["payload_bytes"] = payload.size();
  m["params"] = std::move(records);
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(payload_path, payload);
  write_file_atomic(manifest_path, m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  const auto manifest_path = with_suffix(path, ".json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(manifest_path, std::string("malformed manifest: ") + e.what());
  }
  Checkpoint c;
  try {
    c.kind = m.at("kind").get<std::string>();
    if (c.kind != expected_kind) {
      throw CheckpointKindMismatch(manifest_path, "checkpoint kind is '" + c.kind + "', expected '" + expected_kind + "'");
    }
    c.fingerprint = m.at("fingerprint").get<std::string>();
    c.config = m.at("config").dump();
    const auto payload_path = manifest_path.parent_path() / m.at("payload").get<std::string>();
    const std::string payload = read_file(payload_path);
    const std::size_t declared = m.at("payload_bytes").get<std::size_t>();

    std::set<std::string> names;
    std::size_t expected_offset = 0;
    std::vector<std::pair<std::string, Shape>> layout;
    for (const auto& r : m.at("params")) {
      const auto name = r.at("name").get<std::string>();
      if (!names.insert(name).second) throw CheckpointShapeError(manifest_path, "duplicate parameter '" + name + "'");
      const auto shape = r.at("shape").get<Shape>();
      std::size_t count = 1;
      for (auto d : shape) count *= d;
      if (r.at("offset").get<std::size_t>() != expected_offset) {
        throw CheckpointShapeError(manifest_path, "parameter '" + name + "' has offset " +
                                                      r.at("offset").dump() + ", expected " +
                                                      std::to_string(expected_offset));
      }
      expected_offset += 4 * count;
      layout.emplace_back(name, shape);
    }
    if (expected_offset != declared) {
      throw CheckpointShapeError(manifest_path, "shapes account for " + std::to_string(expected_offset) +
                                                    " bytes but the manifest declares " + std::to_string(declared));
    }
    if (payload.size() < declared) {
      throw CheckpointTruncated(payload_path, "payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                                  std::to_string(declared));
    }
    if (payload.size() > declared) {
      throw CheckpointShapeError(payload_path, "payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                                   std::to_string(declared));
    }
    std::size_t offset = 0;
    for (const auto& [name, shape] : layout) {
      std::size_t count = 1;
      for (auto d : shape) count *= d;
      std::vector<Scalar> values(count);
      for (std::size_t i = 0; i < count; ++i, offset += 4) {
        float f;
        std::memcpy(&f, payload.data() + offset, 4);
        values[i] = static_cast<Scalar>(f);
      }
      c.params.add(name, Tensor::from(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(manifest_path, std::string("malformed manifest: ") + e.what());
  }
  return c;
}

}  // namespace datml::inline DATML_ABI
