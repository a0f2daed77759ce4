#include "deformwarp/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "deformwarp/error.hpp"

namespace deformwarp {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'D', 'W', 'T', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw ParseError("tensor container truncated at byte " + std::to_string(pos_));
    }
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Container entries

std::size_t ContainerEntry::element_count() const {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

std::vector<double> ContainerEntry::as_doubles() const {
  if (dtype == DType::F64) return f64;
  return {f32.begin(), f32.end()};
}

Tensor ContainerEntry::to_tensor() const {
  if (dims.size() > 4 || dims.empty()) {
    throw InvalidArgument("entry '" + name + "' has " + std::to_string(dims.size()) +
                          " dims; tensors take 1 to 4");
  }
  int d[4] = {1, 1, 1, 1};
  const std::size_t off = 4 - dims.size();
  for (std::size_t i = 0; i < dims.size(); ++i) d[off + i] = static_cast<int>(dims[i]);
  Tensor t(d[0], d[1], d[2], d[3]);
  const std::vector<double> v = as_doubles();
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

ContainerEntry ContainerEntry::from_tensor(std::string name, const Tensor& t) {
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(t.batch()),
                                  static_cast<std::uint32_t>(t.height()),
                                  static_cast<std::uint32_t>(t.width()),
                                  static_cast<std::uint32_t>(t.channels())};
  return from_doubles(std::move(name), std::move(dims), {t.values().begin(), t.values().end()});
}

ContainerEntry ContainerEntry::from_doubles(std::string name, std::vector<std::uint32_t> dims,
                                            std::vector<double> values) {
  ContainerEntry e;
  e.name = std::move(name);
  e.dtype = DType::F64;
  e.dims = std::move(dims);
  e.f64 = std::move(values);
  if (e.element_count() != e.f64.size()) {
    throw InvalidArgument("entry '" + e.name + "': dims do not match the value count");
  }
  return e;
}

ContainerEntry ContainerEntry::scalar(std::string name, double v) {
  return from_doubles(std::move(name), {1}, {v});
}

// ---------------------------------------------------------------------------
// Container

void TensorContainer::add(ContainerEntry entry) {
  if (entry.name.empty() || entry.name.size() > 0xffff) {
    throw InvalidArgument("container entry names must have 1 to 65535 bytes");
  }
  if (contains(entry.name)) throw InvalidArgument("duplicate container entry '" + entry.name + "'");
  if (entry.dims.size() > 255) throw InvalidArgument("too many dims in '" + entry.name + "'");
  const std::size_t have = entry.dtype == DType::F64 ? entry.f64.size() : entry.f32.size();
  if (have != entry.element_count()) {
    throw InvalidArgument("entry '" + entry.name + "': payload does not match dims");
  }
  entries_.push_back(std::move(entry));
}

bool TensorContainer::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const ContainerEntry& e) { return e.name == name; });
}

const ContainerEntry& TensorContainer::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw InvalidArgument("no container entry named '" + name + "'");
}

std::vector<std::uint8_t> TensorContainer::serialize() const {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.uint(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.uint(static_cast<std::uint8_t>(e.dtype));
    w.uint(static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) w.uint(d);
    if (e.dtype == DType::F64) {
      for (double v : e.f64) w.f64(v);
    } else {
      for (float v : e.f32) w.f32(v);
    }
  }
  return w.take();
}

TensorContainer TensorContainer::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw ParseError("not a tensor container (bad magic)");
  const auto count = r.uint<std::uint32_t>();
  TensorContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    ContainerEntry e;
    e.name = r.str(r.uint<std::uint16_t>());
    const auto dtype = r.uint<std::uint8_t>();
    if (dtype > 1) throw ParseError("entry '" + e.name + "': unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const auto ndim = r.uint<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) e.dims.push_back(r.uint<std::uint32_t>());
    const std::size_t n = e.element_count();
    r.need(n * (e.dtype == DType::F64 ? 8 : 4));
    if (e.dtype == DType::F64) {
      e.f64.resize(n);
      for (double& v : e.f64) v = r.f64();
    } else {
      e.f32.resize(n);
      for (float& v : e.f32) v = r.f32();
    }
    try {
      c.add(std::move(e));
    } catch (const InvalidArgument& ex) {
      throw ParseError(ex.what());
    }
  }
  if (!r.done()) throw ParseError("trailing bytes after the last container entry");
  return c;
}

void TensorContainer::write(const fs::path& path) const { write_bytes(path, serialize()); }

TensorContainer TensorContainer::read(const fs::path& path) {
  try {
    return deserialize(read_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Pose files

PoseFile parse_pose_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed pose JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("pose file: expected a JSON object");
  PoseFile pf;
  for (const char* key : {"width", "height"}) {
    if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long>() < 1) {
      throw ParseError(std::string("pose file: '") + key + "' must be a positive integer");
    }
  }
  pf.width = j["width"].get<int>();
  pf.height = j["height"].get<int>();
  if (!j.contains("joints") || !j["joints"].is_array()) {
    throw ParseError("pose file: 'joints' must be an array");
  }
  const auto& joints = j["joints"];
  if (joints.size() != kNumJoints) {
    throw ParseError("pose file: 'joints' expected 18 joints, got " + std::to_string(joints.size()));
  }
  for (int k = 0; k < kNumJoints; ++k) {
    const auto& t = joints[k];
    const std::string field = "joints[" + std::to_string(k) + "]";
    if (!t.is_array() || t.size() != 3) throw ParseError("pose file: '" + field + "' must be [x, y, v]");
    for (int i = 0; i < 2; ++i) {
      if (!t[i].is_number() || !std::isfinite(t[i].get<double>())) {
        throw ParseError("pose file: '" + field + "[" + std::to_string(i) + "]' must be a finite number");
      }
    }
    if (!t[2].is_number_integer() || (t[2].get<int>() != 0 && t[2].get<int>() != 1)) {
      throw ParseError("pose file: '" + field + "[2]' visibility must be 0 or 1");
    }
    pf.pose.joints[k] = {t[0].get<double>(), t[1].get<double>(), t[2].get<int>() == 1};
  }
  return pf;
}

std::string pose_to_json(const PoseFile& pf) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "{\"width\": " << pf.width << ", \"height\": " << pf.height << ", \"joints\": [";
  for (int k = 0; k < kNumJoints; ++k) {
    const Keypoint& p = pf.pose.joints[k];
    os << (k ? ", " : "") << "[" << p.x << ", " << p.y << ", " << (p.visible ? 1 : 0) << "]";
  }
  os << "]}\n";
  return os.str();
}

PoseFile read_pose(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_pose_json(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_pose(const fs::path& path, const PoseFile& pf) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write pose file " + path.string());
  out << pose_to_json(pf);
}

// ---------------------------------------------------------------------------
// PNG

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((c + 1.0) * 127.5));
}

double from_byte(std::uint8_t b) { return b / 127.5 - 1.0; }

namespace {

struct RawImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

RawImage read_rgb(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ParseError(path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  RawImage raw{static_cast<int>(img.width), static_cast<int>(img.height), {}};
  raw.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError(path.string() + ": " + msg);
  }
  return raw;
}

void write_raw(const fs::path& path, int width, int height, std::uint32_t format,
               const std::vector<std::uint8_t>& pixels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + img.message);
  }
}

}  // namespace

Tensor read_png(const fs::path& path) {
  const RawImage raw = read_rgb(path);
  Tensor t(1, raw.height, raw.width, 3);
  for (std::size_t i = 0; i < raw.rgb.size(); ++i) t[i] = from_byte(raw.rgb[i]);
  return t;
}

void write_png(const fs::path& path, const Tensor& image) {
  if (image.batch() != 1 || image.channels() != 3) {
    throw InvalidArgument("write_png: expected a (1, H, W, 3) image, got " + image.shape_string());
  }
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(image[i]);
  write_raw(path, image.width(), image.height(), PNG_FORMAT_RGB, px);
}

RegionMask read_mask_png(const fs::path& path) {
  const RawImage raw = read_rgb(path);
  RegionMask m(PartId::Torso, raw.width, raw.height);
  for (std::size_t p = 0; p < m.values.size(); ++p) m.values[p] = raw.rgb[3 * p] != 0 ? 1 : 0;
  return m;
}

void write_mask_png(const fs::path& path, const RegionMask& mask) {
  std::vector<std::uint8_t> px(mask.values.size());
  for (std::size_t p = 0; p < px.size(); ++p) px[p] = mask.values[p] ? 255 : 0;
  write_raw(path, mask.width, mask.height, PNG_FORMAT_GRAY, px);
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty manifest");
  const std::vector<std::string> header = split_csv(line);
  const std::vector<std::string> required{"image_a", "pose_a", "image_b", "pose_b"};
  const bool has_mask = header.size() == 5 && header[4] == "mask_b";
  if (header.size() < 4 || !std::equal(required.begin(), required.end(), header.begin()) ||
      (header.size() == 5 && !has_mask) || header.size() > 5) {
    throw ParseError(path.string() + ": header must be image_a,pose_a,image_b,pose_b[,mask_b]");
  }
  std::vector<ManifestRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    ManifestRow r{resolve(cells[0]), resolve(cells[1]), resolve(cells[2]), resolve(cells[3]), {}};
    if (has_mask && !cells[4].empty()) r.mask_b = resolve(cells[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  const bool masks = std::any_of(rows.begin(), rows.end(), [](const ManifestRow& r) { return r.mask_b.has_value(); });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "image_a,pose_a,image_b,pose_b" << (masks ? ",mask_b" : "") << "\n";
  for (const auto& r : rows) {
    out << r.image_a.string() << "," << r.pose_a.string() << "," << r.image_b.string() << ","
        << r.pose_b.string();
    if (masks) out << "," << (r.mask_b ? r.mask_b->string() : "");
    out << "\n";
  }
}

}  // namespace deformwarp
