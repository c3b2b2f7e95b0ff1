#include "lego/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lego/errors.hpp"

namespace lego {

namespace {

constexpr char kMagic[8] = {'L', 'E', 'G', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <class U>
U take(std::string_view bytes, std::size_t& at) {
  if (at + sizeof(U) > bytes.size()) throw CheckpointError("checkpoint truncated");
  U v;
  std::memcpy(&v, bytes.data() + at, sizeof(U));
  at += sizeof(U);
  return v;
}

void check_digest(std::string_view bytes, const std::string& expected) {
  if (expected.empty()) return;
  const auto actual = sha256_hex(bytes);
  if (actual != expected) {
    throw CheckpointError("checkpoint digest mismatch: expected " + expected + ", got " + actual);
  }
}

struct Parsed {
  ModelConfig config;
  CheckpointInfo info;
  std::map<std::string, std::pair<ag::Shape, std::vector<float>>> tensors;
};

Parsed parse(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  std::size_t at = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, at);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(bytes, at);
  if (at + header_len > bytes.size()) throw CheckpointError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(at, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  at += header_len;

  Parsed p;
  try {
    p.config = header.at("config").get<ModelConfig>();
    p.info.global_epoch = header.at("global_epoch").get<int>();
    p.info.experience = header.at("experience").get<int>();
    for (const auto& t : header.at("parameters")) {
      auto name = t.at("name").get<std::string>();
      auto shape = t.at("shape").get<ag::Shape>();
      const auto n = static_cast<std::size_t>(ag::numel(shape));
      if (at + n * sizeof(float) > bytes.size()) throw CheckpointError("checkpoint payload truncated at " + name);
      std::vector<float> values(n);
      std::memcpy(values.data(), bytes.data() + at, n * sizeof(float));
      at += n * sizeof(float);
      p.tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (at != bytes.size()) throw CheckpointError("trailing bytes after checkpoint payload");
  return p;
}

void assign(Model& model, Parsed& p) {
  for (auto& param : model.parameters()) {
    auto it = p.tensors.find(param.name);
    if (it == p.tensors.end()) throw CheckpointError("checkpoint has no parameter '" + param.name + "'");
    if (it->second.first != param.tensor.shape()) {
      throw CheckpointError("parameter '" + param.name + "' has shape " + ag::to_string(it->second.first) +
                            " in the checkpoint, model expects " + ag::to_string(param.tensor.shape()));
    }
    auto dst = param.tensor.mutable_values();
    std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
  }
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw CheckpointError("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string serialize_checkpoint(const Model& model, const CheckpointInfo& info) {
  nlohmann::json header;
  header["config"] = model.config();
  header["global_epoch"] = info.global_epoch;
  header["experience"] = info.experience;
  auto& table = header["parameters"] = nlohmann::json::array();
  for (const auto& p : model.parameters()) table.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& p : model.parameters()) {
    const auto v = p.tensor.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  return out;
}

LoadedCheckpoint deserialize_checkpoint(std::string_view bytes, const std::string& expected_digest) {
  check_digest(bytes, expected_digest);
  auto p = parse(bytes);
  Model model(p.config, 0);
  assign(model, p);
  return {p.config, p.info, std::move(model)};
}

void load_parameters(Model& model, std::string_view bytes, const std::string& expected_digest) {
  check_digest(bytes, expected_digest);
  auto p = parse(bytes);
  if (!(p.config == model.config())) {
    throw CheckpointError("checkpoint config (" + p.config.family() + ", L=" + std::to_string(p.config.layers) +
                          ", H=" + std::to_string(p.config.heads) + ", d=" + std::to_string(p.config.hidden) +
                          ") does not match the model (" + model.config().family() +
                          ", L=" + std::to_string(model.config().layers) + ", H=" +
                          std::to_string(model.config().heads) + ", d=" + std::to_string(model.config().hidden) + ")");
  }
  assign(model, p);
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

CheckpointEntry save_checkpoint(const Model& model, const CheckpointInfo& info, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model, info);
  write_file_bytes(path, bytes);
  return {info.global_epoch, info.experience, path.generic_string(), sha256_hex(bytes)};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_digest) {
  return deserialize_checkpoint(read_file_bytes(path), expected_digest);
}

void load_checkpoint_into(Model& model, const std::filesystem::path& path, const std::string& expected_digest) {
  load_parameters(model, read_file_bytes(path), expected_digest);
}

void write_manifest(const CheckpointManifest& manifest, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "global_epoch,experience,path,sha256\n";
  for (const auto& e : manifest) out << e.global_epoch << ',' << e.experience << ',' << e.path << ',' << e.digest << '\n';
  write_file_bytes(path, out.str());
}

CheckpointManifest read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::string line;
  if (!std::getline(in, line) || line != "global_epoch,experience,path,sha256") {
    throw CheckpointError(path.string() + ": unexpected manifest header");
  }
  CheckpointManifest out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 4) throw CheckpointError(path.string() + ": malformed manifest row '" + line + "'");
    try {
      out.push_back({std::stoi(f[0]), std::stoi(f[1]), f[2], f[3]});
    } catch (const std::exception&) {
      throw CheckpointError(path.string() + ": malformed manifest row '" + line + "'");
    }
  }
  return out;
}

}  // namespace lego
