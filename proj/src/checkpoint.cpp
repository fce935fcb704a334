#include "cwss/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace fs = std::filesystem;

namespace cwss {

namespace {

constexpr char kMagic[4] = {'C', 'W', 'S', 'S'};

std::uint64_t fnv1a64(const std::uint8_t* data, size_t len) {
  std::uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, size_t len) : data_(data), len_(len) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > len_) throw TruncatedFileError("checkpoint file ends mid-record");
  }
  const std::uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

std::string ints_csv(std::initializer_list<int> vals) {
  std::string s;
  for (int v : vals) {
    if (!s.empty()) s += ",";
    s += std::to_string(v);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
  return out;
}

}  // namespace

std::string encode_architecture(const ArchitectureConfig& a, const TrainState& st) {
  std::ostringstream os;
  os << "input_channels=" << a.input_channels << "\n";
  os << "input_size=" << a.input_size << "\n";
  for (int l = 0; l < 3; ++l) {
    const auto& c = a.conv[static_cast<size_t>(l)];
    os << "conv" << (l + 1) << "=" << ints_csv({c.channels, c.stride, c.padding}) << "\n";
  }
  os << "primary=" << ints_csv({a.primary.kernel, a.primary.stride, a.primary.padding,
                                a.primary.types, a.primary.dim}) << "\n";
  os << "digit=" << ints_csv({a.digit.classes, a.digit.dim}) << "\n";
  os << "routing_iterations=" << a.routing_iterations << "\n";
  os << "decoder_grid=" << a.decoder.grid << "\n";
  os << "decoder_channels=" << ints_csv({a.decoder.channels[0], a.decoder.channels[1],
                                         a.decoder.channels[2], a.decoder.channels[3]}) << "\n";
  os << "epoch=" << st.epoch << "\n";
  char alpha[48];
  std::snprintf(alpha, sizeof(alpha), "%a", static_cast<double>(st.alpha));
  os << "alpha=" << alpha << "\n";
  os << "adam_step=" << st.adam_step << "\n";
  return os.str();
}

void decode_architecture(const std::string& text, ArchitectureConfig& arch, TrainState& state) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed checkpoint header line: " + line);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    try {
      if (key == "input_channels") {
        arch.input_channels = std::stoi(val);
      } else if (key == "input_size") {
        arch.input_size = std::stoi(val);
      } else if (key == "conv1" || key == "conv2" || key == "conv3") {
        auto v = parse_ints(val);
        if (v.size() != 3) throw DataError("bad conv spec");
        arch.conv[static_cast<size_t>(key[4] - '1')] = {v[0], v[1], v[2]};
      } else if (key == "primary") {
        auto v = parse_ints(val);
        if (v.size() != 5) throw DataError("bad primary spec");
        arch.primary = {v[0], v[1], v[2], v[3], v[4]};
      } else if (key == "digit") {
        auto v = parse_ints(val);
        if (v.size() != 2) throw DataError("bad digit spec");
        arch.digit = {v[0], v[1]};
      } else if (key == "routing_iterations") {
        arch.routing_iterations = std::stoi(val);
      } else if (key == "decoder_grid") {
        arch.decoder.grid = std::stoi(val);
      } else if (key == "decoder_channels") {
        auto v = parse_ints(val);
        if (v.size() != 4) throw DataError("bad decoder spec");
        for (int i = 0; i < 4; ++i) arch.decoder.channels[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
      } else if (key == "epoch") {
        state.epoch = std::stoi(val);
      } else if (key == "alpha") {
        state.alpha = std::strtof(val.c_str(), nullptr);
      } else if (key == "adam_step") {
        state.adam_step = std::stoll(val);
      } else {
        throw DataError("unknown checkpoint header key: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw DataError("malformed checkpoint header value in line: " + line);
    }
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, ckpt.version);

  std::string header = encode_architecture(ckpt.arch, ckpt.state);
  put_u32(buf, static_cast<std::uint32_t>(header.size()));
  buf.insert(buf.end(), header.begin(), header.end());

  put_u32(buf, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& [name, tensor] : ckpt.blocks) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u32(buf, static_cast<std::uint32_t>(tensor.rank()));
    for (int e : tensor.shape) put_u64(buf, static_cast<std::uint64_t>(e));
    for (float v : tensor.data) put_f32(buf, v);
  }
  put_u64(buf, fnv1a64(buf.data(), buf.size()));

  fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out.good()) throw IoError("short write to checkpoint: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move checkpoint into place: " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  auto size = static_cast<size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> buf(size);
  if (size > 0)
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!in.good() && size > 0) throw IoError("cannot read checkpoint: " + path);

  if (size < 4 + 4 + 8) throw TruncatedFileError("checkpoint too short: " + path);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);

  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(buf[size - 8 + static_cast<size_t>(i)]) << (8 * i);
  if (fnv1a64(buf.data(), size - 8) != stored)
    throw ChecksumError("checkpoint checksum mismatch: " + path);

  Reader r(buf.data(), size - 8);
  r.bytes(4);  // magic
  std::uint32_t version = r.u32();
  if (version != 1)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.version = version;
  std::uint32_t header_len = r.u32();
  decode_architecture(r.bytes(header_len), ckpt.arch, ckpt.state);

  std::uint32_t count = r.u32();
  for (std::uint32_t b = 0; b < count; ++b) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<int>(r.u64()));
    size_t numel = shape_numel(shape);
    Tensor t(shape);
    for (size_t i = 0; i < numel; ++i) t.data[i] = r.f32();
    ckpt.blocks.emplace(std::move(name), std::move(t));
  }
  if (r.pos() != size - 8)
    throw DataError("checkpoint has trailing bytes before checksum: " + path);
  return ckpt;
}

}  // namespace cwss
