#pragma once

#include "refseg/scene.hpp"
#include "refseg/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace refseg {

namespace fs = std::filesystem;

inline constexpr char kTensorMagic[8] = {'R', 'S', 'E', 'G', 'T', 'N', 'S', 'R'};

enum class DType : std::uint32_t { f32 = 0, f64 = 1 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A dataset problem tied to one manifest record.
class DatasetError : public FormatError {
 public:
  DatasetError(int sample_id, const std::string& what)
      : FormatError("sample " + std::to_string(sample_id) + ": " + what), id_(sample_id) {}
  int sample_id() const { return id_; }

 private:
  int id_;
};

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const fs::path& path, const Tensor<T>& t);
/// Reads a tensor file of either precision and converts to T.
template <typename T>
Tensor<T> load_tensor(const fs::path& path);

/// Grayscale PGM of a [H, W] map in [0, 1].
void write_pgm(const fs::path& path, const Tensor<float>& map);
/// Binary PPM of a [3, H, W] image in [0, 1].
void write_ppm(const fs::path& path, const Tensor<float>& image);
/// [3, H, W] image from a binary PPM (P6, maxval 255).
Tensor<float> read_ppm(const fs::path& path);

inline constexpr const char* kManifestName = "manifest.jsonl";

struct DatasetWriteOptions {
  bool previews = false;
};

/// Writes `manifest.jsonl`, `tensors/` and optionally `previews/` under dir.
void write_dataset(const fs::path& dir, const std::vector<Sample>& samples, const DatasetWriteOptions& options = {});

/// Reads a dataset directory. Unknown manifest fields are ignored; a note is
/// written to `warnings` when it is non-null.
std::vector<Sample> read_dataset(const fs::path& dir, std::ostream* warnings = nullptr);

}  // namespace refseg
