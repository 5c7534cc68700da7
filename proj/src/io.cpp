// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "stran/hash.hpp"

namespace stran::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

FormatError::FormatError(const fs::path& path, std::uint64_t offset,
                         const std::string& what)
    : Error(path.string() + ": " + what + " (byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return bytes;
}

// Writes to "<path>.tmp" and renames, so a failed write leaves no partial
// file behind.
void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put_f32s(std::vector<unsigned char>& b, const Tensor& t) {
  const Tensor f = t.to(DType::F32);
  const auto d = f.data<float>();
  const auto* p = reinterpret_cast<const unsigned char*>(d.data());
  b.insert(b.end(), p, p + d.size() * sizeof(float));
}

class Reader {
 public:
  Reader(const fs::path& path, const std::vector<unsigned char>& bytes, std::size_t end)
      : path_(path), b_(bytes), end_(end) {}

  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(path_, pos_, what); }
  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n) fail(std::string("truncated ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(&b_[pos_]), n);
    pos_ += n;
    return s;
  }
  Tensor f32s(const Shape& s, const char* what) {
    const std::size_t n = s.numel();
    if (n > (end_ - pos_) / sizeof(float)) fail(std::string("truncated ") + what);
    Tensor t(s, DType::F32);
    std::memcpy(t.data<float>().data(), &b_[pos_], n * sizeof(float));
    pos_ += n * sizeof(float);
    return t;
  }

 private:
  const fs::path& path_;
  const std::vector<unsigned char>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

int stem_number(const fs::path& p, bool& has) {
  const std::string s = p.stem().string();
  std::size_t i = s.size();
  while (i > 0 && std::isdigit(static_cast<unsigned char>(s[i - 1]))) --i;
  has = i < s.size();
  if (!has) return 0;
  int v = 0;
  std::from_chars(s.data() + i, s.data() + s.size(), v);
  return v;
}

std::string path_field(const fs::path& p, const fs::path& base) {
  fs::path rel = fs::absolute(p).lexically_normal().lexically_relative(
      fs::absolute(base).lexically_normal());
  if (rel.empty()) rel = fs::absolute(p).lexically_normal();
  const std::string s = rel.generic_string();
  if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
    throw Error("manifest paths may not contain ',' or newlines: " + s);
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t i = s.find(sep, start);
    out.push_back(s.substr(start, i - start));
    if (i == std::string::npos) return out;
    start = i + 1;
  }
}

template <typename T>
bool parse_int(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

image::DegradeConfig parse_degrade(const std::string& canonical, const fs::path& path,
                                   std::uint64_t offset) {
  image::DegradeConfig c;
  std::set<std::string> seen;
  for (const auto& kv : split(canonical, ';')) {
    const auto eq = kv.find('=');
    const std::string k = kv.substr(0, eq), v = eq == std::string::npos ? "" : kv.substr(eq + 1);
    bool ok = false;
    if (k == "factor") ok = parse_int(v, c.factor);
    else if (k == "block") ok = parse_int(v, c.block);
    else if (k == "q") ok = parse_double(v, c.q);
    else if (k == "seed") ok = parse_int(v, c.seed);
    if (!ok) throw FormatError(path, offset, "bad degrade setting '" + kv + "'");
    seen.insert(k);
  }
  if (seen.size() != 4) throw FormatError(path, offset, "incomplete degrade settings");
  return c;
}

Tensor scalar_entry(double v) { return Tensor::full({1, 1, 1, 1}, v, DType::F32); }

Tensor list_entry(const std::vector<int>& v) {
  std::vector<double> d{static_cast<double>(v.size())};
  d.insert(d.end(), v.begin(), v.end());
  return Tensor::from({1, 1, 1, static_cast<int>(d.size())}, d, DType::F32);
}

using EntryMap = std::map<std::string, const Tensor*>;

EntryMap index(const std::vector<NamedTensor>& entries) {
  EntryMap m;
  for (const auto& e : entries) m[e.name] = &e.value;
  return m;
}

const Tensor& entry(const EntryMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw Error("checkpoint has no entry '" + name + "'");
  return *it->second;
}

int int_entry(const EntryMap& m, const std::string& name) {
  const double v = entry(m, name).at(0);
  if (v != std::floor(v)) throw Error("checkpoint entry '" + name + "' is not an integer");
  return static_cast<int>(v);
}

std::vector<int> list_from(const EntryMap& m, const std::string& name) {
  const Tensor& t = entry(m, name);
  const int n = static_cast<int>(t.at(0));
  if (n < 0 || static_cast<std::size_t>(n) + 1 != t.numel())
    throw Error("checkpoint entry '" + name + "' is malformed");
  std::vector<int> v;
  for (int i = 0; i < n; ++i) v.push_back(static_cast<int>(t.at(i + 1)));
  return v;
}

void load_params(ag::ParamSet& ps, const EntryMap& m, const std::string& prefix) {
  for (auto* p : ps.list()) {
    const Tensor& t = entry(m, prefix + p->name);
    if (t.shape() != p->value.shape())
      throw ShapeError("checkpoint entry '" + prefix + p->name + "' does not fit the model",
                       t.shape(), p->value.shape());
    p->value = t.to(p->value.dtype());
  }
}

void add_params(std::vector<NamedTensor>& out, const ag::ParamSet& ps,
                const std::string& prefix) {
  for (const auto* p : ps.list()) out.push_back({prefix + p->name, p->value});
}

void add_moments(std::vector<NamedTensor>& out, const train::Adam& a,
                 const std::string& prefix) {
  for (std::size_t i = 0; i < a.m().size(); ++i) {
    out.push_back({prefix + ".m." + std::to_string(i), a.m()[i]});
    out.push_back({prefix + ".v." + std::to_string(i), a.v()[i]});
  }
  out.push_back({prefix + ".t", scalar_entry(static_cast<double>(a.steps()))});
}

void load_moments(train::Adam& a, const ag::ParamSet& ps, const EntryMap& m,
                  const std::string& prefix) {
  a.ensure(ps);
  for (std::size_t i = 0; i < a.m().size(); ++i) {
    for (auto [kind, vec] : {std::pair{".m.", &a.m()}, std::pair{".v.", &a.v()}}) {
      const std::string name = prefix + kind + std::to_string(i);
      const Tensor& t = entry(m, name);
      if (t.shape() != (*vec)[i].shape())
        throw ShapeError("checkpoint entry '" + name + "' does not fit", t.shape(), (*vec)[i].shape());
      (*vec)[i] = t.to((*vec)[i].dtype());
    }
  }
  a.set_steps(int_entry(m, prefix + ".t"));
}

constexpr double kMaxExactCounter = 16777216.0;  // 2^24, exact in f32

}  // namespace

// ---- Images -----------------------------------------------------------------

Tensor read_ppm(const fs::path& path) {
  const auto b = read_bytes(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> void { throw FormatError(path, pos, what); };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '6') fail("expected binary PPM magic 'P6'");
  pos = 2;
  auto number = [&](const char* what) {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size()) fail(std::string("header ends before ") + what);
    if (!std::isdigit(b[pos])) fail(std::string("expected ") + what);
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > (1 << 24)) fail(std::string(what) + " too large");
      ++pos;
    }
    return static_cast<int>(v);
  };
  const std::size_t wpos = pos;
  const int w = number("width");
  const int h = number("height");
  const std::size_t mpos = pos;
  const int maxval = number("maxval");
  if (w < 1 || h < 1) {
    pos = wpos;
    fail("width and height must be positive");
  }
  if (maxval != 255) {
    pos = mpos;
    fail("only maxval 255 is supported, got " + std::to_string(maxval));
  }
  if (pos >= b.size() || !std::isspace(b[pos])) fail("expected whitespace after maxval");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (b.size() - pos < need)
    fail("pixel data truncated: need " + std::to_string(need) + " bytes, have " +
         std::to_string(b.size() - pos));
  Tensor img({1, 3, h, w}, DType::F32);
  auto d = img.data<float>();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) d[c * hw + p] = static_cast<float>(b[pos + 3 * p + c] / 255.0);
  return img;
}

void write_ppm(const fs::path& path, const Tensor& img) {
  const Shape s = img.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("write_ppm: expected [1,3,h,w]", s);
  const std::string header = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<unsigned char> b(header.begin(), header.end());
  const std::size_t hw = s.plane();
  b.reserve(b.size() + 3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) {
      const double x = std::clamp(img.at(c * hw + p), 0.0, 1.0);
      b.push_back(static_cast<unsigned char>(std::lround(x * 255.0)));
    }
  write_bytes(path, b);
}

Tensor read_stfr(const fs::path& path) {
  const auto b = read_bytes(path);
  Reader r(path, b, b.size());
  if (r.str(std::min<std::size_t>(4, b.size()), "magic") != "STFR") {
    throw FormatError(path, 0, "expected magic 'STFR'");
  }
  const std::uint32_t w = r.u32("width"), h = r.u32("height"), c = r.u32("channels");
  if (w == 0 || h == 0 || c == 0 || w > (1u << 24) || h > (1u << 24) || c > 4096)
    throw FormatError(path, 4, "invalid extents " + std::to_string(w) + "x" +
                                   std::to_string(h) + "x" + std::to_string(c));
  Tensor t = r.f32s({1, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)}, "planes");
  if (r.pos() != b.size()) r.fail("trailing bytes after planes");
  return t;
}

void write_stfr(const fs::path& path, const Tensor& img) {
  const Shape s = img.shape();
  if (s.n != 1) throw ShapeError("write_stfr: expected a single image", s);
  std::vector<unsigned char> b{'S', 'T', 'F', 'R'};
  put_u32(b, static_cast<std::uint32_t>(s.w));
  put_u32(b, static_cast<std::uint32_t>(s.h));
  put_u32(b, static_cast<std::uint32_t>(s.c));
  put_f32s(b, img);
  write_bytes(path, b);
}

bool is_image_path(const fs::path& path) {
  const auto e = path.extension().string();
  return e == ".ppm" || e == ".stfr";
}

Tensor read_image(const fs::path& path) {
  const auto e = path.extension().string();
  if (e == ".ppm") return read_ppm(path);
  if (e == ".stfr") return read_stfr(path);
  throw Error("unsupported image type: " + path.string());
}

void write_image(const fs::path& path, const Tensor& img) {
  const auto e = path.extension().string();
  if (e == ".ppm") return write_ppm(path, img);
  if (e == ".stfr") return write_stfr(path, img);
  throw Error("unsupported image type: " + path.string());
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_path(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    bool ha, hb;
    const int na = stem_number(a, ha), nb = stem_number(b, hb);
    if (ha != hb) return hb;
    if (na != nb) return na < nb;
    return a.filename() < b.filename();
  });
  return out;
}

// ---- Checkpoints -------------------------------------------------------------

void save_checkpoint(const fs::path& path, const std::vector<NamedTensor>& entries) {
  std::vector<unsigned char> b{'S', 'T', 'C', 'K'};
  put_u32(b, kCheckpointVersion);
  put_u32(b, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(b, static_cast<std::uint32_t>(e.name.size()));
    b.insert(b.end(), e.name.begin(), e.name.end());
    const Shape s = e.value.shape();
    put_u32(b, 4);
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(b, static_cast<std::uint32_t>(d));
    put_f32s(b, e.value);
  }
  put_u64(b, fnv1a64(std::as_bytes(std::span(b))));
  write_bytes(path, b);
}

std::vector<NamedTensor> load_checkpoint(const fs::path& path) {
  const auto b = read_bytes(path);
  if (b.size() < 20) throw FormatError(path, b.size(), "file too short for a checkpoint");
  if (std::memcmp(b.data(), "STCK", 4) != 0) throw FormatError(path, 0, "expected magic 'STCK'");
  const std::size_t body = b.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(b[body + i]) << (8 * i);
  const std::uint64_t actual =
      fnv1a64(std::as_bytes(std::span(b.data(), body)));
  if (stored != actual) throw FormatError(path, body, "checksum mismatch");
  Reader r(path, b, body);
  r.str(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32("entry count");
  std::vector<NamedTensor> out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len, "name");
    if (!names.insert(name).second) r.fail("duplicate entry '" + name + "'");
    const std::uint32_t rank = r.u32("rank");
    if (rank < 1 || rank > 4) r.fail("unsupported rank " + std::to_string(rank));
    int dims[4] = {1, 1, 1, 1};
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32("dims");
      if (d == 0 || d > (1u << 28)) r.fail("invalid dimension in '" + name + "'");
      dims[4 - rank + k] = static_cast<int>(d);
    }
    Tensor t = r.f32s({dims[0], dims[1], dims[2], dims[3]}, "payload");
    out.push_back({std::move(name), std::move(t)});
  }
  if (r.pos() != body) r.fail("trailing bytes before checksum");
  return out;
}

std::vector<NamedTensor> generator_entries(const backbone::Generator& gen) {
  const auto& c = gen.cfg;
  std::vector<NamedTensor> out{
      {"config.radius", scalar_entry(c.radius)},
      {"config.channels", scalar_entry(c.channels)},
      {"config.blocks", scalar_entry(c.blocks)},
      {"config.inject", list_entry(c.inject)},
      {"config.taps", list_entry(c.taps)},
      {"config.factor", scalar_entry(c.factor)},
      {"config.head_channels", scalar_entry(c.head_channels)},
      {"config.lte_widths", list_entry({c.lte.widths.begin(), c.lte.widths.end()})},
      {"config.match", list_entry({c.match.d, c.match.stride, c.match.pad})},
  };
  add_params(out, gen.params, "gen.");
  return out;
}

backbone::Generator generator_from_entries(const std::vector<NamedTensor>& entries) {
  const auto m = index(entries);
  backbone::BackboneConfig c;
  c.radius = int_entry(m, "config.radius");
  c.channels = int_entry(m, "config.channels");
  c.blocks = int_entry(m, "config.blocks");
  c.inject = list_from(m, "config.inject");
  c.taps = list_from(m, "config.taps");
  c.factor = int_entry(m, "config.factor");
  c.head_channels = int_entry(m, "config.head_channels");
  const auto widths = list_from(m, "config.lte_widths");
  if (widths.size() != c.lte.widths.size()) throw Error("checkpoint: bad LTE widths");
  std::copy(widths.begin(), widths.end(), c.lte.widths.begin());
  const auto match = list_from(m, "config.match");
  if (match.size() != 3) throw Error("checkpoint: bad match settings");
  c.match.d = match[0];
  c.match.stride = match[1];
  c.match.pad = match[2];
  auto gen = backbone::Generator::init(c, 0, DType::F32);
  load_params(gen.params, m, "gen.");
  return gen;
}

std::vector<NamedTensor> trainer_entries(const train::Trainer& t) {
  if (t.step >= kMaxExactCounter) throw Error("checkpoint: step counter too large");
  auto out = generator_entries(t.gen);
  add_params(out, t.disc.params, "disc.");
  add_moments(out, t.opt_g, "adam_g");
  add_moments(out, t.opt_d, "adam_d");
  out.push_back({"state.epoch", scalar_entry(t.epoch)});
  out.push_back({"state.step", scalar_entry(static_cast<double>(t.step))});
  return out;
}

void restore_trainer(train::Trainer& t, const std::vector<NamedTensor>& entries) {
  const auto m = index(entries);
  load_params(t.gen.params, m, "gen.");
  load_params(t.disc.params, m, "disc.");
  load_moments(t.opt_g, t.gen.params, m, "adam_g");
  load_moments(t.opt_d, t.disc.params, m, "adam_d");
  t.epoch = int_entry(m, "state.epoch");
  t.step = int_entry(m, "state.step");
}

// ---- Manifest -----------------------------------------------------------------

const ManifestClip* Manifest::find(const std::string& id) const {
  for (const auto& c : clips)
    if (c.id == id) return &c;
  return nullptr;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::ostringstream out;
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(m.degrade.hash()));
  out << "stran-manifest,1\n";
  out << "degrade," << m.degrade.canonical() << "," << hex << "\n";
  for (const auto& c : m.clips) {
    if (c.id.empty() || c.id.find_first_of(",\n") != std::string::npos)
      throw Error("manifest: invalid clip id '" + c.id + "'");
    out << "clip," << c.id << "," << c.frames.size() << "," << path_field(c.reference, base)
        << "\n";
    for (const auto& f : c.frames)
      out << "frame," << path_field(f.lr, base) << "," << path_field(f.hr, base) << "\n";
  }
  const std::string s = out.str();
  write_bytes(path, {s.begin(), s.end()});
}

Manifest read_manifest(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw IoError("manifest not found: " + path.string());
  const auto bytes = read_bytes(path);
  const std::string text(bytes.begin(), bytes.end());
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  auto resolve = [&](const std::string& s) {
    fs::path p(s);
    return p.is_absolute() ? p : (base / p).lexically_normal();
  };
  Manifest m;
  std::size_t offset = 0, expect_frames = 0;
  bool header = false, degrade = false;
  std::set<std::string> ids;
  while (offset < text.size()) {
    std::size_t nl = text.find('\n', offset);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(offset, nl - offset);
    const auto f = split(line, ',');
    auto fail = [&](const std::string& what) -> void { throw FormatError(path, offset, what); };
    if (line.empty()) {
    } else if (!header) {
      if (line != "stran-manifest,1") fail("expected 'stran-manifest,1'");
      header = true;
    } else if (f[0] == "degrade") {
      if (f.size() != 3 || degrade) fail("bad degrade line");
      m.degrade = parse_degrade(f[1], path, offset);
      m.degrade.validate();
      char hex[32];
      std::snprintf(hex, sizeof hex, "%016llx",
                    static_cast<unsigned long long>(m.degrade.hash()));
      if (f[2] != hex) fail("degrade hash " + f[2] + " does not match its settings (" + hex + ")");
      degrade = true;
    } else if (f[0] == "clip") {
      if (!degrade) fail("clip before degrade line");
      if (expect_frames) fail("previous clip is missing frames");
      if (f.size() != 4 || f[1].empty()) fail("bad clip line");
      if (!ids.insert(f[1]).second) fail("duplicate clip id '" + f[1] + "'");
      if (!parse_int(f[2], expect_frames) || expect_frames == 0) fail("bad frame count");
      m.clips.push_back({f[1], resolve(f[3]), {}});
    } else if (f[0] == "frame") {
      if (!expect_frames) fail("frame line outside a clip");
      if (f.size() != 3) fail("bad frame line");
      m.clips.back().frames.push_back({resolve(f[1]), resolve(f[2])});
      --expect_frames;
    } else {
      fail("unknown record '" + f[0] + "'");
    }
    offset = nl + 1;
  }
  if (!header || !degrade) throw FormatError(path, text.size(), "missing manifest header");
  if (expect_frames) throw FormatError(path, text.size(), "last clip is missing frames");
  for (const auto& c : m.clips) {
    auto check = [&](const fs::path& p) {
      if (!fs::is_regular_file(p))
        throw IoError("manifest " + path.string() + ": clip '" + c.id + "' entry " + p.string() +
                    " does not exist");
    };
    check(c.reference);
    for (const auto& fr : c.frames) {
      check(fr.lr);
      check(fr.hr);
    }
  }
  return m;
}

std::vector<train::Clip> load_dataset(const Manifest& m) {
  std::vector<train::Clip> out;
  for (const auto& mc : m.clips) {
    train::Clip c;
    c.id = mc.id;
    auto load = [&](const fs::path& p) {
      try {
        return read_image(p);
      } catch (const FormatError&) {
        throw;
      } catch (const Error& e) {
        throw IoError("clip '" + mc.id + "': cannot load " + p.string() + ": " + e.what());
      }
    };
    for (const auto& f : mc.frames) {
      c.lr.push_back(load(f.lr));
      c.hr.push_back(load(f.hr));
      const Shape ls = c.lr.back().shape(), hs = c.hr.back().shape();
      if (ls.c != 3 || hs.c != 3 || hs.h != ls.h * m.degrade.factor ||
          hs.w != ls.w * m.degrade.factor || ls != c.lr.front().shape())
        throw ShapeError("clip '" + mc.id + "': frame " + f.lr.string() +
                             " does not match its HR frame or the clip",
                         ls, hs);
    }
    c.ref = load(mc.reference);
    if (c.ref.shape() != c.hr.front().shape())
      throw ShapeError("clip '" + mc.id + "': reference " + mc.reference.string() +
                           " must match the HR frame extents",
                       c.ref.shape(), c.hr.front().shape());
    out.push_back(std::move(c));
  }
  return out;
}

// ---- Training config ------------------------------------------------------------

RunConfig parse_config(const std::string& text, const std::string& origin) {
  struct Line {
    int number;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, raw)) {
    ++number;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    lines.push_back({number, trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }

  RunConfig cfg;
  for (const auto& l : lines)
    if (l.key == "preset") {
      if (l.value == "desk") cfg.train = train::desk_preset();
      else if (l.value == "full") cfg.train = train::full_preset();
      else
        throw ConfigError(origin + ":" + std::to_string(l.number) + ": unknown preset '" +
                          l.value + "' (expected desk or full)");
      cfg.preset = l.value;
    }

  auto& t = cfg.train;
  const std::map<std::string, int*> ints{
      {"epochs", &t.schedule.epochs}, {"warmup", &t.schedule.warmup},
      {"halve_at", &t.schedule.halve_at}, {"batch", &t.batch},
      {"lr_patch", &t.lr_patch}, {"ckpt_every", &t.ckpt_every},
      {"radius", &cfg.model.radius}, {"channels", &cfg.model.channels},
      {"head_channels", &cfg.model.head_channels}};
  const std::map<std::string, double*> reals{
      {"lr0", &t.schedule.lr0}, {"w_rec", &t.weights.rec}, {"w_adv", &t.weights.adv},
      {"w_per", &t.weights.per}, {"w_tex", &t.weights.tex}, {"gp_lambda", &t.weights.gp_lambda}};
  std::vector<std::string> unknown;
  std::set<std::string> seen;
  for (const auto& l : lines) {
    const std::string where = origin + ":" + std::to_string(l.number);
    if (!seen.insert(l.key).second) throw ConfigError(where + ": duplicate key '" + l.key + "'");
    if (l.key == "preset") continue;
    bool ok = true;
    if (auto i = ints.find(l.key); i != ints.end()) ok = parse_int(l.value, *i->second);
    else if (auto r = reals.find(l.key); r != reals.end()) ok = parse_double(l.value, *r->second);
    else if (l.key == "seed") ok = parse_int(l.value, t.seed);
    else {
      unknown.push_back(l.key);
      continue;
    }
    if (!ok) throw ConfigError(where + ": bad value for '" + l.key + "': '" + l.value + "'");
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError(origin + ": unknown config key(s): " + list);
  }
  try {
    t.validate();
    cfg.model.validate();
  } catch (const Error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

RunConfig read_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw IoError("config not found: " + path.string());
  const auto b = read_bytes(path);
  return parse_config(std::string(b.begin(), b.end()), path.string());
}

std::string echo_config(const RunConfig& c) {
  const auto& t = c.train;
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "preset = %s\nepochs = %d\nwarmup = %d\nhalve_at = %d\nlr0 = %g\n"
                "weights = (%g, %g, %g, %g)\ngp_lambda = %g\nbatch = %d\nlr_patch = %d\n"
                "ckpt_every = %d\nseed = %llu\nradius = %d\nchannels = %d\n"
                "head_channels = %d\n",
                c.preset.c_str(), t.schedule.epochs, t.schedule.warmup, t.schedule.halve_at,
                t.schedule.lr0, t.weights.rec, t.weights.adv, t.weights.per, t.weights.tex,
                t.weights.gp_lambda, t.batch, t.lr_patch, t.ckpt_every,
                static_cast<unsigned long long>(t.seed), c.model.radius, c.model.channels,
                c.model.head_channels);
  return buf;
}

}  // namespace stran::io
