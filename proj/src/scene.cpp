#include "refseg/scene.hpp"

#include "refseg/language.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace refseg {

std::string_view name(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string_view name(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
  }
  return "?";
}

std::string_view name(SizeClass s) { return s == SizeClass::small ? "small" : "large"; }

std::optional<ShapeKind> parse_kind(std::string_view w) {
  for (auto k : kAllKinds) {
    if (name(k) == w) return k;
  }
  return std::nullopt;
}

std::optional<Color> parse_color(std::string_view w) {
  for (auto c : kAllColors) {
    if (name(c) == w) return c;
  }
  return std::nullopt;
}

std::optional<SizeClass> parse_size(std::string_view w) {
  for (auto s : kAllSizes) {
    if (name(s) == w) return s;
  }
  return std::nullopt;
}

bool SceneObject::covers(int px, int py) const {
  const double x = px + 0.5, y = py + 0.5;
  if (x < x0 || x >= x0 + extent || y < y0 || y >= y0 + extent) return false;
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::circle: {
      const double r = extent / 2.0, dx = x - cx(), dy = y - cy();
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeKind::triangle:
      // Apex at the top center, base along the bottom edge.
      return std::abs(x - cx()) <= (y - y0) / 2.0;
  }
  return false;
}

void SceneConfig::validate() const {
  if (canvas < 8) throw std::invalid_argument("scene canvas must be at least 8 pixels");
  if (min_shapes < 1 || max_shapes < min_shapes) throw std::invalid_argument("invalid shape count range");
  if (small_min < 2 || small_max < small_min || large_min < small_max || large_max < large_min) {
    throw std::invalid_argument("invalid shape size ranges");
  }
  if (large_max >= canvas) throw std::invalid_argument("shapes larger than the canvas");
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be positive");
}

namespace {

enum class Direction { left, right, top, bottom };

constexpr std::array<Direction, 4> kDirections{Direction::left, Direction::right, Direction::top,
                                               Direction::bottom};

std::string_view superlative(Direction d) {
  switch (d) {
    case Direction::left: return "leftmost";
    case Direction::right: return "rightmost";
    case Direction::top: return "topmost";
    case Direction::bottom: return "bottommost";
  }
  return "?";
}

std::vector<std::string> position_phrase(Direction d) {
  switch (d) {
    case Direction::left: return {"on", "the", "left"};
    case Direction::right: return {"on", "the", "right"};
    case Direction::top: return {"at", "the", "top"};
    case Direction::bottom: return {"at", "the", "bottom"};
  }
  return {};
}

// Larger is further in direction d.
double reach(const SceneObject& o, Direction d) {
  switch (d) {
    case Direction::left: return -o.cx();
    case Direction::right: return o.cx();
    case Direction::top: return -o.cy();
    case Direction::bottom: return o.cy();
  }
  return 0.0;
}

struct Attributes {
  std::optional<SizeClass> size;
  std::optional<Color> color;
  ShapeKind kind = ShapeKind::circle;

  bool matches(const SceneObject& o) const {
    return o.kind == kind && (!color || *color == o.color) && (!size || *size == o.size);
  }
};

std::vector<int> matching(const std::vector<SceneObject>& objects, const Attributes& a) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(objects.size()); ++i) {
    if (a.matches(objects[static_cast<std::size_t>(i)])) out.push_back(i);
  }
  return out;
}

// The object furthest in direction d when it leads every other candidate by
// at least the spatial margin.
std::optional<int> extreme(const std::vector<SceneObject>& objects, const std::vector<int>& candidates,
                           Direction d) {
  if (candidates.empty()) return std::nullopt;
  int best = candidates.front();
  for (int c : candidates) {
    if (reach(objects[c], d) > reach(objects[best], d)) best = c;
  }
  for (int c : candidates) {
    if (c != best && reach(objects[best], d) - reach(objects[c], d) < kSpatialMargin) return std::nullopt;
  }
  return best;
}

enum class Relation { above, below, left_of, right_of };

bool relation_holds(const SceneObject& subject, const SceneObject& anchor, Relation r) {
  switch (r) {
    case Relation::above: return subject.cy() <= anchor.cy() - kSpatialMargin;
    case Relation::below: return subject.cy() >= anchor.cy() + kSpatialMargin;
    case Relation::left_of: return subject.cx() <= anchor.cx() - kSpatialMargin;
    case Relation::right_of: return subject.cx() >= anchor.cx() + kSpatialMargin;
  }
  return false;
}

std::vector<std::string> relation_words(Relation r) {
  switch (r) {
    case Relation::above: return {"above"};
    case Relation::below: return {"below"};
    case Relation::left_of: return {"left", "of"};
    case Relation::right_of: return {"right", "of"};
  }
  return {};
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

template <typename C>
const auto& pick(const C& options, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, options.size() - 1);
  return options[dist(rng)];
}

}  // namespace

std::optional<std::string> describe_target(const SceneMeta& meta, std::mt19937_64& rng,
                                           const SceneConfig& config) {
  const auto& objects = meta.objects;
  if (meta.target < 0 || meta.target >= static_cast<int>(objects.size())) {
    throw std::out_of_range("describe_target: target index out of range");
  }
  const SceneObject& target = objects[static_cast<std::size_t>(meta.target)];
  if (objects.size() == 1) return std::string(name(target.kind));

  const std::vector<std::vector<Attributes>> levels = {
      {Attributes{std::nullopt, std::nullopt, target.kind}},
      {Attributes{std::nullopt, target.color, target.kind}, Attributes{target.size, std::nullopt, target.kind}},
      {Attributes{target.size, target.color, target.kind}},
  };

  struct Choice {
    Attributes attributes;
    std::optional<Direction> direction;
    std::size_t candidates = 1;
  };
  std::optional<Choice> chosen;
  for (const auto& level : levels) {
    std::vector<Choice> options;
    for (const auto& a : level) {
      if (matching(objects, a).size() == 1) options.push_back({a, std::nullopt, 1});
    }
    if (!options.empty()) {
      chosen = pick(options, rng);
      break;
    }
  }
  if (!chosen) {
    for (const auto& level : levels) {
      std::vector<Choice> options;
      for (const auto& a : level) {
        const auto set = matching(objects, a);
        for (Direction d : kDirections) {
          if (extreme(objects, set, d) == meta.target) options.push_back({a, d, set.size()});
        }
      }
      if (!options.empty()) {
        chosen = pick(options, rng);
        break;
      }
    }
  }
  if (!chosen) return std::nullopt;

  std::vector<std::string> words{"the"};
  const bool use_superlative = chosen->direction && chosen->candidates >= 3;
  if (use_superlative) words.emplace_back(superlative(*chosen->direction));
  if (chosen->attributes.size) words.emplace_back(name(*chosen->attributes.size));
  if (chosen->attributes.color) words.emplace_back(name(*chosen->attributes.color));
  words.emplace_back(name(chosen->attributes.kind));
  if (chosen->direction && !use_superlative) {
    for (auto& w : position_phrase(*chosen->direction)) words.push_back(std::move(w));
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < config.relation_prob) {
    struct Clause {
      int anchor;
      Relation relation;
    };
    std::vector<Clause> clauses;
    for (int j = 0; j < static_cast<int>(objects.size()); ++j) {
      if (j == meta.target) continue;
      const auto& anchor = objects[static_cast<std::size_t>(j)];
      if (matching(objects, Attributes{std::nullopt, anchor.color, anchor.kind}).size() != 1) continue;
      for (Relation r : {Relation::above, Relation::below, Relation::left_of, Relation::right_of}) {
        if (relation_holds(target, anchor, r)) clauses.push_back({j, r});
      }
    }
    if (!clauses.empty()) {
      const Clause& c = pick(clauses, rng);
      const auto& anchor = objects[static_cast<std::size_t>(c.anchor)];
      std::vector<std::string> clause = relation_words(c.relation);
      clause.push_back("the");
      clause.emplace_back(name(anchor.color));
      clause.emplace_back(name(anchor.kind));
      const bool long_form = unit(rng) < 0.5;
      const std::size_t base = words.size() + clause.size();
      if (long_form && base + 2 <= static_cast<std::size_t>(config.max_tokens)) {
        words.push_back("that");
        words.push_back("is");
        words.insert(words.end(), clause.begin(), clause.end());
      } else if (base <= static_cast<std::size_t>(config.max_tokens)) {
        words.insert(words.end(), clause.begin(), clause.end());
      }
    }
  }
  if (static_cast<int>(words.size()) > config.max_tokens) return std::nullopt;
  return join(words);
}

std::vector<int> resolve_expression(std::string_view expression, const SceneMeta& meta) {
  const std::vector<std::string> tokens = tokenize(expression);
  const auto& objects = meta.objects;
  std::size_t pos = 0;
  auto peek = [&](std::size_t ahead = 0) -> std::string_view {
    return pos + ahead < tokens.size() ? std::string_view(tokens[pos + ahead]) : std::string_view();
  };

  if (peek() == "the") ++pos;
  std::optional<Direction> direction;
  for (Direction d : kDirections) {
    if (peek() == superlative(d)) {
      direction = d;
      ++pos;
      break;
    }
  }
  Attributes attributes;
  if (auto s = parse_size(peek())) {
    attributes.size = s;
    ++pos;
  }
  if (auto c = parse_color(peek())) {
    attributes.color = c;
    ++pos;
  }
  auto kind = parse_kind(peek());
  if (!kind) return {};
  attributes.kind = *kind;
  ++pos;

  for (Direction d : kDirections) {
    const auto phrase = position_phrase(d);
    if (peek() == phrase[0] && peek(1) == phrase[1] && peek(2) == phrase[2]) {
      if (direction) return {};
      direction = d;
      pos += 3;
      break;
    }
  }

  std::vector<int> candidates = matching(objects, attributes);

  if (pos < tokens.size()) {
    bool introduced = false;
    if (peek() == "that" && peek(1) == "is") {
      pos += 2;
      introduced = true;
    }
    std::optional<Relation> relation;
    if (peek() == "above") {
      relation = Relation::above;
      pos += 1;
    } else if (peek() == "below") {
      relation = Relation::below;
      pos += 1;
    } else if (peek() == "left" && peek(1) == "of") {
      relation = Relation::left_of;
      pos += 2;
    } else if (peek() == "right" && peek(1) == "of") {
      relation = Relation::right_of;
      pos += 2;
    }
    if (!relation) return {};
    (void)introduced;
    if (peek() != "the") return {};
    ++pos;
    auto anchor_color = parse_color(peek());
    auto anchor_kind = parse_kind(peek(1));
    if (!anchor_color || !anchor_kind) return {};
    pos += 2;
    const auto anchors = matching(objects, Attributes{std::nullopt, anchor_color, *anchor_kind});
    if (anchors.size() != 1) return {};
    const auto& anchor = objects[static_cast<std::size_t>(anchors.front())];
    std::erase_if(candidates, [&](int c) {
      return c == anchors.front() || !relation_holds(objects[static_cast<std::size_t>(c)], anchor, *relation);
    });
  }
  if (pos != tokens.size()) return {};

  if (direction) {
    auto best = extreme(objects, candidates, *direction);
    if (!best) return {};
    return {*best};
  }
  return candidates;
}

namespace {

std::array<float, 3> rgb(Color c) {
  switch (c) {
    case Color::red: return {0.90f, 0.15f, 0.15f};
    case Color::green: return {0.15f, 0.80f, 0.20f};
    case Color::blue: return {0.15f, 0.30f, 0.95f};
    case Color::yellow: return {0.95f, 0.90f, 0.15f};
  }
  return {0.f, 0.f, 0.f};
}

bool separated(const SceneObject& a, const SceneObject& b) {
  return a.x0 + a.extent < b.x0 || b.x0 + b.extent < a.x0 || a.y0 + a.extent < b.y0 ||
         b.y0 + b.extent < a.y0;
}

}  // namespace

Tensor<float> render_image(const SceneMeta& meta, std::mt19937_64& rng) {
  const int n = meta.canvas;
  const Index plane = Index{n} * n;
  std::uniform_real_distribution<float> background(0.30f, 0.55f);
  std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
  Buffer<float> img(3 * plane);
  for (Index i = 0; i < img.size(); ++i) img(i) = background(rng);
  for (const auto& o : meta.objects) {
    const auto color = rgb(o.color);
    for (int y = o.y0; y < o.y0 + o.extent; ++y) {
      for (int x = o.x0; x < o.x0 + o.extent; ++x) {
        if (!o.covers(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          img(c * plane + y * n + x) = std::clamp(color[static_cast<std::size_t>(c)] + jitter(rng), 0.0f, 1.0f);
        }
      }
    }
  }
  return Tensor<float>({3, n, n}, std::move(img));
}

Tensor<float> render_mask(const SceneMeta& meta, int object) {
  const int n = meta.canvas;
  const auto& o = meta.objects.at(static_cast<std::size_t>(object));
  Buffer<float> m = Buffer<float>::Zero(Index{n} * n);
  for (int y = std::max(0, o.y0); y < std::min(n, o.y0 + o.extent); ++y) {
    for (int x = std::max(0, o.x0); x < std::min(n, o.x0 + o.extent); ++x) {
      if (o.covers(x, y)) m(y * n + x) = 1.0f;
    }
  }
  return Tensor<float>({n, n}, std::move(m));
}

Sample gen_sample(std::mt19937_64& rng, const SceneConfig& config, int id) {
  config.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  for (int attempt = 0; attempt < config.scene_retries; ++attempt) {
    SceneMeta meta;
    meta.canvas = config.canvas;
    const int count = uniform_int(config.min_shapes, config.max_shapes);
    meta.target = uniform_int(0, count - 1);

    std::vector<SceneObject> objects(static_cast<std::size_t>(count));
    SceneObject& target = objects[static_cast<std::size_t>(meta.target)];
    target.kind = kAllKinds[static_cast<std::size_t>(uniform_int(0, 2))];
    for (int i = 0; i < count; ++i) {
      auto& o = objects[static_cast<std::size_t>(i)];
      if (i != meta.target) {
        o.kind = unit(rng) < config.share_kind_prob ? target.kind
                                                    : kAllKinds[static_cast<std::size_t>(uniform_int(0, 2))];
      }
      o.color = kAllColors[static_cast<std::size_t>(uniform_int(0, 3))];
      o.size = kAllSizes[static_cast<std::size_t>(uniform_int(0, 1))];
    }

    bool placed = true;
    for (std::size_t i = 0; i < objects.size() && placed; ++i) {
      auto& o = objects[i];
      o.extent = o.size == SizeClass::small ? uniform_int(config.small_min, config.small_max)
                                            : uniform_int(config.large_min, config.large_max);
      placed = false;
      for (int r = 0; r < config.placement_retries; ++r) {
        o.x0 = uniform_int(0, config.canvas - o.extent);
        o.y0 = uniform_int(0, config.canvas - o.extent);
        if (std::all_of(objects.begin(), objects.begin() + static_cast<std::ptrdiff_t>(i),
                        [&](const SceneObject& other) { return separated(o, other); })) {
          placed = true;
          break;
        }
      }
    }
    if (!placed) continue;
    meta.objects = std::move(objects);

    auto expression = describe_target(meta, rng, config);
    if (!expression) continue;

    Sample s;
    s.id = id;
    s.expression = std::move(*expression);
    s.image = render_image(meta, rng);
    s.mask = render_mask(meta, meta.target);
    s.meta = std::move(meta);
    return s;
  }
  throw std::runtime_error("gen_sample: could not build a describable scene after " +
                           std::to_string(config.scene_retries) + " attempts");
}

std::vector<Sample> gen_samples(std::uint64_t seed, int count, const SceneConfig& config, int first_id) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    out.push_back(gen_sample(rng, config, first_id + i));
  }
  return out;
}

}  // namespace refseg
