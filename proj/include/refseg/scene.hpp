#pragma once

#include "refseg/tensor.hpp"

#include <array>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace refseg {

enum class ShapeKind : int { circle = 0, square = 1, triangle = 2 };
enum class Color : int { red = 0, green = 1, blue = 2, yellow = 3 };
enum class SizeClass : int { small = 0, large = 1 };

inline constexpr std::array<ShapeKind, 3> kAllKinds{ShapeKind::circle, ShapeKind::square,
                                                    ShapeKind::triangle};
inline constexpr std::array<Color, 4> kAllColors{Color::red, Color::green, Color::blue, Color::yellow};
inline constexpr std::array<SizeClass, 2> kAllSizes{SizeClass::small, SizeClass::large};

std::string_view name(ShapeKind k);
std::string_view name(Color c);
std::string_view name(SizeClass s);
std::optional<ShapeKind> parse_kind(std::string_view w);
std::optional<Color> parse_color(std::string_view w);
std::optional<SizeClass> parse_size(std::string_view w);

/// Minimum separation, in pixels between object centers, for any spatial
/// comparison ("left", "leftmost", "above", ...) to hold.
inline constexpr double kSpatialMargin = 4.0;

/// One rendered object: a `extent`-sided bounding box at (x0, y0).
struct SceneObject {
  ShapeKind kind = ShapeKind::circle;
  Color color = Color::red;
  SizeClass size = SizeClass::small;
  int x0 = 0;
  int y0 = 0;
  int extent = 1;

  double cx() const { return x0 + extent / 2.0; }
  double cy() const { return y0 + extent / 2.0; }
  /// Whether the pixel whose center is (px + 0.5, py + 0.5) lies inside.
  bool covers(int px, int py) const;
};

struct SceneMeta {
  int canvas = 64;
  std::vector<SceneObject> objects;
  int target = 0;
};

struct SceneConfig {
  int canvas = 64;
  int min_shapes = 2;
  int max_shapes = 5;
  int small_min = 10, small_max = 13;
  int large_min = 17, large_max = 21;
  int max_tokens = 12;
  /// Probability that a distractor copies the target's kind, which forces
  /// attribute or spatial words.
  double share_kind_prob = 0.5;
  /// Probability of appending a (redundant, true) relation to another object.
  /// Kept low so most expressions stay minimal; the clauses populate the
  /// longer length buckets.
  double relation_prob = 0.1;
  int placement_retries = 200;
  int scene_retries = 100;

  void validate() const;
};

/// One dataset record. Image [3, H, W] in [0, 1]; mask [H, W] in {0, 1}.
struct Sample {
  int id = 0;
  Tensor<float> image;
  Tensor<float> mask;
  std::string expression;
  SceneMeta meta;
};

/// Shortest unambiguous description of `meta.objects[meta.target]`, possibly
/// extended with a true relation clause. Returns nullopt when no description
/// in the grammar singles out the target.
std::optional<std::string> describe_target(const SceneMeta& meta, std::mt19937_64& rng,
                                           const SceneConfig& config);

/// Objects selected by `expression` in `meta` under the expression grammar.
/// An unparsable expression selects nothing.
std::vector<int> resolve_expression(std::string_view expression, const SceneMeta& meta);

Tensor<float> render_image(const SceneMeta& meta, std::mt19937_64& rng);
Tensor<float> render_mask(const SceneMeta& meta, int object);

/// Random scene and expression; regenerates scenes until placement and
/// description both succeed (bounded by scene_retries).
Sample gen_sample(std::mt19937_64& rng, const SceneConfig& config, int id = 0);

/// `count` samples, each drawn from a generator seeded by (seed, index), so
/// any sample can be reproduced alone.
std::vector<Sample> gen_samples(std::uint64_t seed, int count, const SceneConfig& config, int first_id = 0);

}  // namespace refseg
