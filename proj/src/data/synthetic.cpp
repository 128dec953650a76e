#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "advaug/data/dataset.hpp"
#include "advaug/errors.hpp"
#include "advaug/random.hpp"

namespace advaug::data {

namespace {

struct Point {
  double x;
  double y;
};

using Polyline = std::vector<Point>;

// Control polygon of one clean stroke; Bezier strokes are flattened at render time.
struct Stroke {
  std::vector<Point> control;
  bool bezier = false;
};

Point bezier_point(const std::vector<Point>& c, double t) {
  const double u = 1.0 - t;
  const double b0 = u * u * u, b1 = 3 * u * u * t, b2 = 3 * u * t * t, b3 = t * t * t;
  return {b0 * c[0].x + b1 * c[1].x + b2 * c[2].x + b3 * c[3].x, b0 * c[0].y + b1 * c[1].y + b2 * c[2].y + b3 * c[3].y};
}

Polyline flatten(const Stroke& s) {
  if (!s.bezier) return s.control;
  double len = 0.0;
  for (std::size_t i = 1; i < s.control.size(); ++i)
    len += std::hypot(s.control[i].x - s.control[i - 1].x, s.control[i].y - s.control[i - 1].y);
  const int n = std::max(8, static_cast<int>(len / 1.5));
  Polyline out;
  for (int i = 0; i <= n; ++i) out.push_back(bezier_point(s.control, static_cast<double>(i) / n));
  return out;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

// Multiplies the page by (1 - intensity * coverage), where coverage is the
// anti-aliased footprint of the whole polyline (max over its segments, so
// joints are not inked twice).
void draw(Image& page, const Polyline& line, double width, double intensity) {
  if (line.size() < 2) return;
  const double reach = width / 2.0 + 1.0;
  double x0 = line[0].x, x1 = x0, y0 = line[0].y, y1 = y0;
  for (const auto& p : line) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const int bx0 = std::max(0, static_cast<int>(std::floor(x0 - reach)));
  const int bx1 = std::min(page.width - 1, static_cast<int>(std::ceil(x1 + reach)));
  const int by0 = std::max(0, static_cast<int>(std::floor(y0 - reach)));
  const int by1 = std::min(page.height - 1, static_cast<int>(std::ceil(y1 + reach)));
  if (bx0 > bx1 || by0 > by1) return;
  const int bw = bx1 - bx0 + 1;
  std::vector<double> cover(static_cast<std::size_t>(bw) * (by1 - by0 + 1), 0.0);
  for (std::size_t s = 1; s < line.size(); ++s) {
    const Point a = line[s - 1], b = line[s];
    const int sx0 = std::max(bx0, static_cast<int>(std::floor(std::min(a.x, b.x) - reach)));
    const int sx1 = std::min(bx1, static_cast<int>(std::ceil(std::max(a.x, b.x) + reach)));
    const int sy0 = std::max(by0, static_cast<int>(std::floor(std::min(a.y, b.y) - reach)));
    const int sy1 = std::min(by1, static_cast<int>(std::ceil(std::max(a.y, b.y) + reach)));
    for (int y = sy0; y <= sy1; ++y)
      for (int x = sx0; x <= sx1; ++x) {
        const double d = segment_distance({x + 0.5, y + 0.5}, a, b);
        const double c = std::clamp(width / 2.0 + 0.5 - d, 0.0, 1.0);
        double& slot = cover[static_cast<std::size_t>(y - by0) * bw + (x - bx0)];
        slot = std::max(slot, c);
      }
  }
  for (int y = by0; y <= by1; ++y)
    for (int x = bx0; x <= bx1; ++x) {
      const double c = cover[static_cast<std::size_t>(y - by0) * bw + (x - bx0)];
      if (c > 0.0) page.at(y, x) = static_cast<float>(page.at(y, x) * (1.0 - intensity * c));
    }
}

Point random_point(Rng& rng, double lo, double hi) { return {uniform(rng, lo, hi), uniform(rng, lo, hi)}; }

Stroke curve_stroke(Rng& rng, double canvas) {
  Stroke s;
  s.bezier = true;
  Point p = random_point(rng, 0.1 * canvas, 0.9 * canvas);
  double heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  s.control.push_back(p);
  for (int i = 0; i < 3; ++i) {
    heading += uniform(rng, -1.2, 1.2);
    const double step = uniform(rng, 0.08, 0.22) * canvas;
    p = {std::clamp(p.x + step * std::cos(heading), 0.05 * canvas, 0.95 * canvas),
         std::clamp(p.y + step * std::sin(heading), 0.05 * canvas, 0.95 * canvas)};
    s.control.push_back(p);
  }
  return s;
}

Stroke geometric_stroke(Rng& rng, double canvas) {
  Stroke s;
  const double kind = uniform01(rng);
  if (kind < 0.5) {
    const Point a = random_point(rng, 0.1 * canvas, 0.6 * canvas);
    const double w = uniform(rng, 0.15, 0.35) * canvas, h = uniform(rng, 0.15, 0.35) * canvas;
    s.control = {a, {a.x + w, a.y}, {a.x + w, a.y + h}, {a.x, a.y + h}, a};
  } else if (kind < 0.8) {
    Point p = random_point(rng, 0.15 * canvas, 0.5 * canvas);
    const int n = uniform_int(rng, 3, 5);
    s.control.push_back(p);
    for (int i = 0; i < n; ++i) {
      p = {std::min(p.x + uniform(rng, 0.06, 0.12) * canvas, 0.95 * canvas),
           std::clamp(p.y + (i % 2 ? -1.0 : 1.0) * uniform(rng, 0.1, 0.25) * canvas, 0.05 * canvas, 0.95 * canvas)};
      s.control.push_back(p);
    }
  } else {
    s.control = {random_point(rng, 0.05 * canvas, 0.95 * canvas), random_point(rng, 0.05 * canvas, 0.95 * canvas)};
  }
  return s;
}

Stroke jittered(const Stroke& s, double jitter, Rng& rng) {
  Stroke out = s;
  for (auto& p : out.control) {
    p.x += jitter * normal(rng);
    p.y += jitter * normal(rng);
  }
  return out;
}

// Short parallel pencil marks next to a random point of a stroke.
void hatch(Image& page, const Polyline& line, double width, double tone, Rng& rng) {
  const Point anchor = line[uniform_index(rng, line.size())];
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double len = uniform(rng, 5.0, 10.0);
  const int marks = uniform_int(rng, 3, 6);
  const double nx = -std::sin(angle), ny = std::cos(angle);
  for (int i = 0; i < marks; ++i) {
    const double off = (i - marks / 2.0) * 3.0;
    const Point c{anchor.x + nx * off, anchor.y + ny * off};
    const Point a{c.x - 0.5 * len * std::cos(angle), c.y - 0.5 * len * std::sin(angle)};
    const Point b{c.x + 0.5 * len * std::cos(angle), c.y + 0.5 * len * std::sin(angle)};
    draw(page, {a, b}, width * 0.8, uniform(rng, tone * 0.6, tone));
  }
}

void validate(const SyntheticSketchSpec& spec) {
  if (spec.canvas < 8) throw ConfigError("synthetic canvas must be at least 8 pixels");
  if (spec.min_strokes < 1 || spec.max_strokes < spec.min_strokes) throw ConfigError("bad synthetic stroke count range");
  if (spec.overdraw < 1) throw ConfigError("synthetic overdraw must be at least 1");
  if (spec.jitter < 0.0 || spec.noise_density < 0.0 || spec.noise_density > 1.0 || spec.stroke_width <= 0.0)
    throw ConfigError("synthetic jitter, noise density and stroke width must be non-negative");
  if (spec.pencil_tone <= 0.0 || spec.pencil_tone > 1.0) throw ConfigError("pencil tone must lie in (0, 1]");
  if (spec.construction_lines < 0) throw ConfigError("construction line count must be non-negative");
}

std::string indexed(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
  return buf;
}

}  // namespace

ImagePair synthesize_pair(const SyntheticSketchSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  const double canvas = spec.canvas;
  const int n = uniform_int(rng, spec.min_strokes, spec.max_strokes);
  std::vector<Stroke> strokes;
  for (int i = 0; i < n; ++i)
    strokes.push_back(spec.style == SketchStyle::Curves ? curve_stroke(rng, canvas) : geometric_stroke(rng, canvas));

  ImagePair pair{"", Image(spec.canvas, spec.canvas, 1.0f), Image(spec.canvas, spec.canvas, 1.0f)};
  for (const auto& s : strokes) draw(pair.y, flatten(s), spec.stroke_width, 1.0);

  for (int i = 0; i < spec.construction_lines; ++i) {
    const Point a = random_point(rng, 0.0, canvas), b = random_point(rng, 0.0, canvas);
    draw(pair.x, {a, b}, 1.0, uniform(rng, 0.12, 0.25));
  }
  for (const auto& s : strokes) {
    for (int k = 0; k < spec.overdraw; ++k) {
      const double tone = spec.pencil_tone + (1.0 - spec.pencil_tone) * uniform01(rng);
      const Polyline line = flatten(jittered(s, spec.jitter, rng));
      draw(pair.x, line, spec.stroke_width, tone);
      if (spec.style == SketchStyle::Geometric && bernoulli(rng, 0.7)) hatch(pair.x, line, spec.stroke_width, 0.6, rng);
    }
  }
  if (spec.noise_density > 0.0) {
    const double grain = 3.0 * spec.noise_density;
    for (auto& v : pair.x.pixels) v = static_cast<float>(v * (1.0 - grain * uniform01(rng)));
    const auto speckles = static_cast<std::uint64_t>(spec.noise_density * pair.x.size());
    for (std::uint64_t i = 0; i < speckles; ++i) {
      float& v = pair.x.pixels[uniform_index(rng, pair.x.size())];
      v = static_cast<float>(v * (1.0 - uniform(rng, 0.1, 0.5)));
    }
  }
  return pair;
}

DatasetPools generate_synthetic(const SyntheticSketchSpec& spec, int n_pairs, int n_rough, int n_clean,
                                std::uint64_t seed) {
  validate(spec);
  if (n_pairs < 0 || n_rough < 0 || n_clean < 0) throw ConfigError("synthetic pool sizes must be non-negative");
  DatasetPools pools;
  for (int i = 0; i < n_pairs; ++i) {
    ImagePair p = synthesize_pair(spec, derive_seed(seed, {1, static_cast<std::uint64_t>(i)}));
    p.name = indexed("pair", i);
    pools.supervised.push_back(std::move(p));
  }
  for (int i = 0; i < n_rough; ++i)
    pools.rough_only.push_back(
        {indexed("rough", i), synthesize_pair(spec, derive_seed(seed, {2, static_cast<std::uint64_t>(i)})).x});
  for (int i = 0; i < n_clean; ++i)
    pools.clean_only.push_back(
        {indexed("clean", i), synthesize_pair(spec, derive_seed(seed, {3, static_cast<std::uint64_t>(i)})).y});
  pools.input_mean = supervised_input_mean(pools);
  return pools;
}

}  // namespace advaug::data
