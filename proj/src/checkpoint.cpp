#include "gedi/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gedi/errors.hpp"

namespace gedi {

namespace {

constexpr char kMagic[8] = {'G', 'E', 'D', 'I', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const ParamSet& params, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["metadata"] = metadata.is_null() ? nlohmann::json::object() : metadata;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& m = params.value(i);
    list.push_back({{"name", params.name(i)},
                    {"shape", {m.rows(), m.cols()}},
                    {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size()) * 8;
  }
  header["parameters"] = std::move(list);
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& m = params.value(i);
    for (Index j = 0; j < m.size(); ++j) {
      std::uint64_t bits;
      std::memcpy(&bits, m.data() + j, 8);
      put_u64(out, bits);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, kMagic, 8) != 0)
    throw ParseError("checkpoint: bad magic");
  const std::uint64_t hlen = get_u64(bytes, 8);
  if (hlen > bytes.size() - 16) throw ParseError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: header is not JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw ParseError("checkpoint: unsupported format version");
    const std::size_t base = 16 + hlen;
    const std::uint64_t payload = header.at("payload_bytes").get<std::uint64_t>();
    if (bytes.size() - base != payload) throw ParseError("checkpoint: payload size mismatch");
    for (const auto& p : header.at("parameters")) {
      const Index rows = p.at("shape").at(0).get<Index>();
      const Index cols = p.at("shape").at(1).get<Index>();
      const std::uint64_t off = p.at("offset").get<std::uint64_t>();
      if (rows < 0 || cols < 0 || off + static_cast<std::uint64_t>(rows * cols) * 8 > payload)
        throw ParseError("checkpoint: parameter outside payload");
      Matrix m(rows, cols);
      for (Index j = 0; j < m.size(); ++j) {
        const std::uint64_t bits = get_u64(bytes, base + off + static_cast<std::size_t>(j) * 8);
        std::memcpy(m.data() + j, &bits, 8);
      }
      ck.params.add(p.at("name").get<std::string>(), std::move(m));
    }
    ck.metadata = header.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const nlohmann::json& metadata) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(params, metadata);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace gedi
