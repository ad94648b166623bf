#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "corefgru/errors.hpp"
#include "corefgru/trainer.hpp"

namespace corefgru {

namespace {

constexpr char kMagic[4] = {'C', 'G', 'R', 'U'};

void put_le(std::string& out, double x) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const ReaderModel& model, const TrainConfig& config, const std::string& path) {
  const ParameterSet& params = model.parameters();
  nlohmann::json header;
  header["config"] = config.to_map();
  header["vocab"] = model.vocabulary().tokens();
  header["classes"] = model.classes();
  nlohmann::json dir = nlohmann::json::array();
  std::string payload;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i];
    dir.push_back({{"name", params.name(i)}, {"shape", {t.rows(), t.cols()}}, {"offset", payload.size()}});
    for (Index r = 0; r < t.rows(); ++r) {
      for (Index c = 0; c < t.cols(); ++c) put_le(payload, t(r, c));
    }
  }
  header["tensors"] = dir;
  header["payload_bytes"] = payload.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorruptCheckpoint("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  out.put(static_cast<char>(kCheckpointVersion));
  const std::string h = header.dump();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.put('\n');
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CorruptCheckpoint("write to " + path + " failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptCheckpoint(path + ": bad magic bytes");
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kCheckpointVersion) {
    throw VersionError(path + ": checkpoint version " + std::to_string(version) + ", reader supports " +
                       std::to_string(kCheckpointVersion));
  }
  const auto nl = bytes.find('\n', 5);
  if (nl == std::string::npos) throw CorruptCheckpoint(path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 5, bytes.begin() + static_cast<std::ptrdiff_t>(nl));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(path + ": malformed header: " + e.what());
  }

  const std::size_t data_start = nl + 1;
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data()) + data_start;
  const std::size_t available = bytes.size() - data_start;

  try {
    std::map<std::string, std::string> kv = header.at("config").get<std::map<std::string, std::string>>();
    TrainConfig config = TrainConfig::from_map(kv);
    Vocabulary vocab = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    auto classes = header.at("classes").get<std::vector<std::string>>();
    const std::size_t expected = header.at("payload_bytes").get<std::size_t>();
    if (available < expected) throw CorruptCheckpoint(path + ": truncated tensor payload");
    if (available > expected) throw CorruptCheckpoint(path + ": trailing bytes after tensor payload");

    ParameterSet params;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("shape").at(0).get<Index>();
      const auto cols = entry.at("shape").at(1).get<Index>();
      const auto offset = entry.at("offset").get<std::size_t>();
      if (rows < 0 || cols < 0) throw CorruptCheckpoint(path + ": negative shape for '" + name + "'");
      const std::size_t n = static_cast<std::size_t>(rows * cols);
      if (offset > expected || n * 8 > expected - offset) {
        throw CorruptCheckpoint(path + ": tensor '" + name + "' extends past the payload");
      }
      Tensor t(rows, cols);
      const unsigned char* p = data + offset;
      for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j, p += 8) t(i, j) = get_le(p);
      }
      params.add(name, std::move(t));
    }
    ReaderModel model = ReaderModel::from_parts(config.reader(), std::move(vocab), std::move(classes), std::move(params));
    return {std::move(model), config};
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(path + ": malformed header: " + e.what());
  }
}

}  // namespace corefgru
