#include "refseg/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <set>

namespace refseg {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(std::string("truncated tensor ") + what);
  return v;
}

template <typename S, typename T>
Tensor<T> read_payload(std::istream& is, const Shape& shape) {
  const Index n = element_count(shape);
  std::vector<S> raw(static_cast<std::size_t>(n));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)))) {
    throw FormatError("truncated tensor payload");
  }
  Buffer<T> values(n);
  for (Index i = 0; i < n; ++i) values(i) = static_cast<T>(raw[static_cast<std::size_t>(i)]);
  return Tensor<T>(shape, std::move(values));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic, sizeof kTensorMagic);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  put_u32(os, static_cast<std::uint32_t>(dtype_of<T>()));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[sizeof kTensorMagic];
  if (!is.read(magic, sizeof magic)) throw FormatError("truncated tensor header");
  if (std::memcmp(magic, kTensorMagic, sizeof magic) != 0) throw FormatError("bad tensor magic");
  const std::uint32_t rank = get_u32(is, "rank");
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(is, "dimension");
    if (d == 0) throw FormatError("zero tensor dimension");
    shape.push_back(static_cast<Index>(d));
  }
  const std::uint32_t dtype = get_u32(is, "dtype");
  if (dtype == static_cast<std::uint32_t>(DType::f32)) return read_payload<float, T>(is, shape);
  if (dtype == static_cast<std::uint32_t>(DType::f64)) return read_payload<double, T>(is, shape);
  throw FormatError("unknown tensor dtype " + std::to_string(dtype));
}

template <typename T>
void save_tensor(const fs::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  if (!os) throw FormatError("write failed: " + path.string());
}

template <typename T>
Tensor<T> load_tensor(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("missing file " + path.string());
  try {
    return read_tensor<T>(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_pgm(const fs::path& path, const Tensor<float>& map) {
  if (map.rank() != 2) throw ShapeError("write_pgm", 0, "expected [H, W], got " + to_string(map.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
  for (Index i = 0; i < map.size(); ++i) os.put(static_cast<char>(to_byte(map[i])));
}

void write_ppm(const fs::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm", 0, "expected [3, H, W], got " + to_string(image.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  const Index h = image.dim(1), w = image.dim(2), plane = h * w;
  os << "P6\n" << w << ' ' << h << "\n255\n";
  for (Index i = 0; i < plane; ++i) {
    for (Index c = 0; c < 3; ++c) os.put(static_cast<char>(to_byte(image[c * plane + i])));
  }
}

Tensor<float> read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("missing file " + path.string());
  std::string magic;
  is >> magic;
  auto next_int = [&]() {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
      is >> std::ws;
    }
    long v = -1;
    is >> v;
    return v;
  };
  if (magic != "P6") throw FormatError(path.string() + ": only binary PPM (P6) images are supported");
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (!is || w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": bad PPM header");
  is.get();
  const Index plane = Index{h} * w;
  std::vector<unsigned char> raw(static_cast<std::size_t>(plane * 3));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError(path.string() + ": truncated PPM payload");
  }
  Buffer<float> values(3 * plane);
  for (Index i = 0; i < plane; ++i) {
    for (Index c = 0; c < 3; ++c) values(c * plane + i) = raw[static_cast<std::size_t>(3 * i + c)] / 255.0f;
  }
  return Tensor<float>({3, h, w}, std::move(values));
}

namespace {

std::string sample_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", id);
  return buf;
}

nlohmann::ordered_json meta_json(const SceneMeta& meta) {
  nlohmann::ordered_json objects = nlohmann::ordered_json::array();
  for (const auto& o : meta.objects) {
    objects.push_back({{"kind", name(o.kind)},
                       {"color", name(o.color)},
                       {"size", name(o.size)},
                       {"x0", o.x0},
                       {"y0", o.y0},
                       {"extent", o.extent}});
  }
  return {{"canvas", meta.canvas}, {"target", meta.target}, {"objects", objects}};
}

template <typename E>
E parse_enum(const nlohmann::json& j, std::optional<E> (*parse)(std::string_view), int id, const char* field) {
  auto v = parse(j.at(field).get<std::string>());
  if (!v) throw DatasetError(id, std::string("unknown ") + field + " '" + j.at(field).get<std::string>() + "'");
  return *v;
}

SceneMeta parse_meta(const nlohmann::json& j, int id) {
  SceneMeta meta;
  meta.canvas = j.at("canvas").get<int>();
  meta.target = j.at("target").get<int>();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.kind = parse_enum<ShapeKind>(o, parse_kind, id, "kind");
    obj.color = parse_enum<Color>(o, parse_color, id, "color");
    obj.size = parse_enum<SizeClass>(o, parse_size, id, "size");
    obj.x0 = o.at("x0").get<int>();
    obj.y0 = o.at("y0").get<int>();
    obj.extent = o.at("extent").get<int>();
    meta.objects.push_back(obj);
  }
  if (meta.target < 0 || meta.target >= static_cast<int>(meta.objects.size())) {
    throw DatasetError(id, "target index out of range");
  }
  return meta;
}

const std::set<std::string> kKnownFields{"id", "expression", "image", "mask", "meta"};

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const DatasetWriteOptions& options) {
  fs::create_directories(dir / "tensors");
  if (options.previews) fs::create_directories(dir / "previews");
  std::ofstream manifest(dir / kManifestName, std::ios::binary);
  if (!manifest) throw FormatError("cannot write " + (dir / kManifestName).string());
  for (const auto& s : samples) {
    const std::string stem = sample_stem(s.id);
    const std::string image_ref = "tensors/" + stem + "_image.bin";
    const std::string mask_ref = "tensors/" + stem + "_mask.bin";
    save_tensor(dir / image_ref, s.image);
    save_tensor(dir / mask_ref, s.mask);
    if (options.previews) {
      write_ppm(dir / "previews" / (stem + ".ppm"), s.image);
      write_pgm(dir / "previews" / (stem + "_mask.pgm"), s.mask);
    }
    nlohmann::ordered_json record{{"id", s.id},
                                  {"expression", s.expression},
                                  {"image", image_ref},
                                  {"mask", mask_ref},
                                  {"meta", meta_json(s.meta)}};
    manifest << record.dump() << '\n';
  }
  if (!manifest) throw FormatError("write failed: " + (dir / kManifestName).string());
}

std::vector<Sample> read_dataset(const fs::path& dir, std::ostream* warnings) {
  std::ifstream manifest(dir / kManifestName);
  if (!manifest) throw FormatError("missing file " + (dir / kManifestName).string());
  std::vector<Sample> samples;
  std::set<std::string> warned;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    const int id = record.contains("id") && record["id"].is_number_integer() ? record["id"].get<int>() : -1;
    try {
      for (const auto& [key, value] : record.items()) {
        if (!kKnownFields.contains(key) && warned.insert(key).second && warnings) {
          *warnings << "warning: ignoring unknown manifest field '" << key << "'\n";
        }
      }
      Sample s;
      s.id = record.at("id").get<int>();
      s.expression = record.at("expression").get<std::string>();
      s.meta = parse_meta(record.at("meta"), id);
      s.image = load_tensor<float>(dir / record.at("image").get<std::string>());
      s.mask = load_tensor<float>(dir / record.at("mask").get<std::string>());
      const Index n = s.meta.canvas;
      if (s.image.shape() != Shape{3, n, n}) {
        throw DatasetError(id, "image shape " + to_string(s.image.shape()) + " does not match the canvas");
      }
      if (s.mask.shape() != Shape{n, n}) {
        throw DatasetError(id, "mask shape " + to_string(s.mask.shape()) + " does not match the canvas");
      }
      samples.push_back(std::move(s));
    } catch (const DatasetError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(id, e.what());
    } catch (const FormatError& e) {
      throw DatasetError(id, e.what());
    }
  }
  return samples;
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const fs::path&, const Tensor<float>&);
template void save_tensor(const fs::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const fs::path&);
template Tensor<double> load_tensor(const fs::path&);

}  // namespace refseg
