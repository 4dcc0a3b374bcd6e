#include "oatlab/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace oatlab {

namespace {

constexpr char kMagic[8] = {'O', 'A', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_double_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_double(v[i]);
  }
  return out;
}

std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_double_list(s)) out.push_back(static_cast<int>(v));
  return out;
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

const std::string& require(const std::map<std::string, std::string>& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw CheckpointError("checkpoint header missing key '" + key + "'");
  return it->second;
}

struct Reader {
  const std::string& buf;
  std::size_t off = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) const {
    if (off + n > buf.size())
      throw CheckpointError(path + ": truncated " + what + " at byte offset " +
                            std::to_string(off));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + static_cast<std::size_t>(i)])) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + static_cast<std::size_t>(i)])) << (8 * i);
    off += 8;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[off++]);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(off, n);
    off += n;
    return s;
  }
};

}  // namespace

std::map<std::string, std::string> model_spec_to_header(const ModelSpec& spec) {
  std::map<std::string, std::string> h;
  h["model.in_channels"] = std::to_string(spec.in_channels);
  h["model.image_size"] = std::to_string(spec.image_size);
  h["model.classes"] = std::to_string(spec.classes);
  h["model.conv_channels"] = format_int_list(spec.conv_channels);
  h["model.conv_kernels"] = format_int_list(spec.conv_kernels);
  h["model.conv_strides"] = format_int_list(spec.conv_strides);
  h["model.conv_pads"] = format_int_list(spec.conv_pads);
  h["model.leaky_slope"] = format_double(spec.leaky_slope);
  h["model.conditional"] = spec.conditional ? "1" : "0";
  h["model.bn_style"] = spec.bn_style == BnStyle::dual ? "dual" : "normal";
  h["model.widths"] = format_double_list(spec.widths);
  h["model.encoder"] = spec.encoder == EncoderScheme::none  ? "none"
                       : spec.encoder == EncoderScheme::dct ? "dct"
                                                            : "ro";
  h["model.encode_dim"] = std::to_string(spec.encode_dim);
  h["model.lambda_grid"] = format_double_list(spec.lambda_grid);
  h["model.bn_eps"] = format_double(spec.bn_eps);
  h["model.bn_momentum"] = format_double(spec.bn_momentum);
  return h;
}

ModelSpec model_spec_from_header(const std::map<std::string, std::string>& h) {
  ModelSpec spec;
  spec.in_channels = std::stoi(require(h, "model.in_channels"));
  spec.image_size = std::stoi(require(h, "model.image_size"));
  spec.classes = std::stoi(require(h, "model.classes"));
  spec.conv_channels = parse_int_list(require(h, "model.conv_channels"));
  spec.conv_kernels = parse_int_list(require(h, "model.conv_kernels"));
  spec.conv_strides = parse_int_list(require(h, "model.conv_strides"));
  spec.conv_pads = parse_int_list(require(h, "model.conv_pads"));
  spec.leaky_slope = std::stod(require(h, "model.leaky_slope"));
  spec.conditional = require(h, "model.conditional") == "1";
  spec.bn_style = require(h, "model.bn_style") == "dual" ? BnStyle::dual : BnStyle::normal;
  spec.widths = parse_double_list(require(h, "model.widths"));
  const std::string& enc = require(h, "model.encoder");
  spec.encoder = enc == "none" ? EncoderScheme::none
                 : enc == "dct" ? EncoderScheme::dct
                                : EncoderScheme::ro;
  spec.encode_dim = std::stoi(require(h, "model.encode_dim"));
  spec.lambda_grid = parse_double_list(require(h, "model.lambda_grid"));
  spec.bn_eps = std::stod(require(h, "model.bn_eps"));
  spec.bn_momentum = std::stod(require(h, "model.bn_momentum"));
  return spec;
}

Checkpoint Checkpoint::capture(ConditionalNet& net,
                               const std::map<std::string, std::string>& config,
                               std::uint64_t seed, std::int64_t step_count) {
  Checkpoint ck;
  ck.header = config;
  auto spec_header = model_spec_to_header(net.spec());
  ck.header.insert(spec_header.begin(), spec_header.end());
  ck.seed = seed;
  ck.step_count = step_count;

  const std::uint8_t dtype = precision() == Precision::f32 ? kDtypeF32 : kDtypeF64;
  for (auto& [name, t] : net.parameters())
    ck.tensors.emplace_back(name, Record{t.shape(), t.data(), dtype});
  for (auto& [name, stats] : net.running_stats())
    ck.tensors.emplace_back("stats:" + name,
                            Record{{static_cast<std::int64_t>(stats->size())}, *stats, dtype});
  if (net.spec().conditional) {
    const LambdaEncoder& enc = net.encoder();
    // The dictionary is built in double precision and must restore bitwise
    // (orthonormality to 1e-6 would not survive a float round-trip).
    if (enc.scheme != EncoderScheme::none)
      ck.tensors.emplace_back("encoder.matrix",
                              Record{{enc.dim, static_cast<std::int64_t>(enc.lambda_grid.size())},
                                     enc.matrix, kDtypeF64});
  }
  return ck;
}

ConditionalNet Checkpoint::restore() const {
  const ModelSpec spec = model_spec_from_header(header);
  ConditionalNet net(spec, seed);

  std::map<std::string, Record> by_name(tensors.begin(), tensors.end());
  std::size_t consumed = 0;
  const auto take = [&](const std::string& name, const Shape& want) -> const Record& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint missing tensor '" + name + "'");
    if (it->second.shape != want)
      throw CheckpointError("checkpoint tensor '" + name + "' has mismatched shape");
    ++consumed;
    return it->second;
  };

  for (auto& [name, t] : net.parameters())
    t.mutable_data() = take(name, t.shape()).values;
  for (auto& [name, stats] : net.running_stats())
    *stats = take("stats:" + name, {static_cast<std::int64_t>(stats->size())}).values;
  if (spec.conditional && spec.encoder != EncoderScheme::none) {
    LambdaEncoder enc = net.encoder();
    const Record& rec = take(
        "encoder.matrix", {enc.dim, static_cast<std::int64_t>(enc.lambda_grid.size())});
    enc.matrix = rec.values;
    net.set_encoder(std::move(enc));
  }
  if (consumed != by_name.size())
    throw CheckpointError("checkpoint contains unrecognized tensors");
  return net;
}

void Checkpoint::save(const std::string& path) const {
  std::string header_text;
  {
    std::map<std::string, std::string> full = header;
    full["seed"] = std::to_string(seed);
    full["step"] = std::to_string(step_count);
    for (const auto& [k, v] : full) header_text += k + "=" + v + "\n";
  }

  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u64(buf, header_text.size());
  buf += header_text;

  for (const auto& [name, rec] : tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(rec.dtype));
    buf.push_back(static_cast<char>(rec.shape.size()));
    for (auto e : rec.shape) put_u32(buf, static_cast<std::uint32_t>(e));
    if (rec.dtype == kDtypeF32) {
      for (double v : rec.values) {
        const float f = static_cast<float>(v);
        char raw[4];
        std::memcpy(raw, &f, 4);
        buf.append(raw, 4);
      }
    } else {
      for (double v : rec.values) {
        char raw[8];
        std::memcpy(raw, &v, 8);
        buf.append(raw, 8);
      }
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(path + ": cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError(path + ": write failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open");
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{buf, 0, path};
  const std::string magic = r.bytes(8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0)
    throw CheckpointError(path + ": bad magic (expected \"OATCKPT1\")");

  Checkpoint ck;
  const std::uint64_t header_len = r.u64("header length");
  const std::string header_text = r.bytes(header_len, "header");
  std::stringstream hs(header_text);
  std::string line;
  while (std::getline(hs, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CheckpointError(path + ": malformed header line '" + line + "'");
    ck.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ck.seed = std::stoull(require(ck.header, "seed"));
  ck.step_count = std::stoll(require(ck.header, "step"));
  ck.header.erase("seed");
  ck.header.erase("step");

  while (r.off < buf.size()) {
    const std::uint32_t name_len = r.u32("tensor name length");
    const std::string name = r.bytes(name_len, "tensor name");
    Record rec;
    rec.dtype = r.u8("dtype");
    if (rec.dtype != kDtypeF32 && rec.dtype != kDtypeF64)
      throw CheckpointError(path + ": unknown dtype code for tensor '" + name + "'");
    const std::uint8_t ndim = r.u8("rank");
    std::int64_t count = 1;
    for (int i = 0; i < ndim; ++i) {
      rec.shape.push_back(static_cast<std::int64_t>(r.u32("extent")));
      count *= rec.shape.back();
    }
    rec.values.resize(static_cast<std::size_t>(count));
    if (rec.dtype == kDtypeF32) {
      const std::string payload = r.bytes(static_cast<std::size_t>(count) * 4, "payload");
      for (std::int64_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, payload.data() + i * 4, 4);
        rec.values[static_cast<std::size_t>(i)] = static_cast<double>(f);
      }
    } else {
      const std::string payload = r.bytes(static_cast<std::size_t>(count) * 8, "payload");
      for (std::int64_t i = 0; i < count; ++i)
        std::memcpy(&rec.values[static_cast<std::size_t>(i)], payload.data() + i * 8, 8);
    }
    ck.tensors.emplace_back(name, std::move(rec));
  }
  return ck;
}

}  // namespace oatlab
