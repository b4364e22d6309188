#include <algorithm>
#include <cmath>
#include <numbers>

#include "pft/data.hpp"

namespace pft::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool inside(ShapeKind shape, double x, double y, double r) {
  switch (shape) {
    case ShapeKind::square:
      return std::abs(x) <= r && std::abs(y) <= r;
    case ShapeKind::ellipse: {
      const double a = x / r, b = y / (0.6 * r);
      return a * a + b * b <= 1.0;
    }
    case ShapeKind::triangle: {
      // equilateral, circumradius r, apex towards -y
      const double h = std::sqrt(3.0) / 2.0;
      const double ax = 0, ay = -r, bx = h * r, by = 0.5 * r, cx = -h * r, cy = 0.5 * r;
      auto edge = [&](double x0, double y0, double x1, double y1) { return (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0); };
      const double e0 = edge(ax, ay, bx, by), e1 = edge(bx, by, cx, cy), e2 = edge(cx, cy, ax, ay);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

void hsv_rgb(double h, double rgb[3]) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double q = 1.0 - f, t = f;
  switch (sector) {
    case 0: rgb[0] = 1; rgb[1] = t; rgb[2] = 0; break;
    case 1: rgb[0] = q; rgb[1] = 1; rgb[2] = 0; break;
    case 2: rgb[0] = 0; rgb[1] = 1; rgb[2] = t; break;
    case 3: rgb[0] = 0; rgb[1] = q; rgb[2] = 1; break;
    case 4: rgb[0] = t; rgb[1] = 0; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[1] = 0; rgb[2] = q; break;
  }
}

void in_range(double v, double lo, double hi, bool hi_open, const char* name) {
  if (!std::isfinite(v) || v < lo || (hi_open ? v >= hi : v > hi))
    fail(ErrorKind::range, std::string("factor ") + name + " = " + std::to_string(v) + " outside [" +
                               std::to_string(lo) + ", " + std::to_string(hi) + (hi_open ? ")" : "]"));
}

}  // namespace

const char* to_string(Factor f) {
  switch (f) {
    case Factor::x_pos: return "x_pos";
    case Factor::y_pos: return "y_pos";
    case Factor::scale: return "scale";
    case Factor::rotation: return "rotation";
    case Factor::shape: return "shape";
    case Factor::hue: return "hue";
  }
  return "unknown";
}

Factor parse_factor(const std::string& name) {
  for (Factor f : {Factor::x_pos, Factor::y_pos, Factor::scale, Factor::rotation, Factor::shape, Factor::hue})
    if (name == to_string(f)) return f;
  fail(ErrorKind::usage, "unknown factor '" + name + "'");
}

void validate(const FactorSpec& s) {
  in_range(s.x_pos, 0, 1, false, "x_pos");
  in_range(s.y_pos, 0, 1, false, "y_pos");
  in_range(s.scale, 0.3, 1, false, "scale");
  in_range(s.rotation, 0, kTwoPi, true, "rotation");
  in_range(s.hue, 0, 1, false, "hue");
}

double get(const FactorSpec& s, Factor f) {
  switch (f) {
    case Factor::x_pos: return s.x_pos;
    case Factor::y_pos: return s.y_pos;
    case Factor::scale: return s.scale;
    case Factor::rotation: return s.rotation;
    case Factor::shape: return static_cast<double>(s.shape);
    case Factor::hue: return s.hue;
  }
  return 0;
}

void set(FactorSpec& s, Factor f, double v) {
  switch (f) {
    case Factor::x_pos: s.x_pos = v; break;
    case Factor::y_pos: s.y_pos = v; break;
    case Factor::scale: s.scale = v; break;
    case Factor::rotation: s.rotation = v; break;
    case Factor::hue: s.hue = v; break;
    case Factor::shape: fail(ErrorKind::usage, "shape is not a continuous factor");
  }
}

FactorSpec rotated(FactorSpec spec, double angle) {
  double r = std::fmod(spec.rotation + angle, kTwoPi);
  if (r < 0) r += kTwoPi;
  spec.rotation = r >= kTwoPi ? 0.0 : r;
  return spec;
}

Tensor render(const FactorSpec& spec, int size, int channels) {
  validate(spec);
  if (size < 4) fail(ErrorKind::usage, "render: size must be at least 4");
  if (channels != 1 && channels != 3) fail(ErrorKind::usage, "render: channels must be 1 or 3");
  const double sz = size;
  const double cx = sz / 4 + spec.x_pos * sz / 2, cy = sz / 4 + spec.y_pos * sz / 2;
  const double r = spec.scale * sz * 0.25;
  const double c = std::cos(spec.rotation), s = std::sin(spec.rotation);
  Tensor img = Tensor::zeros({channels, size, size});
  double rgb[3] = {1, 1, 1};
  if (channels == 3) hsv_rgb(spec.hue, rgb);
  const std::size_t plane = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      int hits = 0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double dx = j + 0.25 + 0.5 * a - cx, dy = i + 0.25 + 0.5 * b - cy;
          hits += inside(spec.shape, c * dx + s * dy, -s * dx + c * dy, r);
        }
      const double cov = hits / 4.0;
      const std::size_t at = static_cast<std::size_t>(i) * static_cast<std::size_t>(size) + static_cast<std::size_t>(j);
      for (int ch = 0; ch < channels; ++ch) img.data[static_cast<std::size_t>(ch) * plane + at] = cov * rgb[ch];
    }
  return img;
}

TransformSequence make_sequence(const FactorSpec& base, Factor factor, double end_value, int T_seq, int size,
                                int channels) {
  if (T_seq < 2) fail(ErrorKind::usage, "make_sequence: T_seq must be at least 2");
  if (factor == Factor::shape) fail(ErrorKind::usage, "make_sequence: shape is not a continuous factor");
  validate(base);
  if (factor != Factor::rotation) {
    FactorSpec end = base;
    set(end, factor, end_value);
    validate(end);
  }
  TransformSequence seq;
  seq.factor = factor;
  const double start = get(base, factor);
  const double per = static_cast<double>(channels) * size * size;
  seq.images = Tensor::zeros({T_seq, channels, size, size});
  for (int i = 0; i < T_seq; ++i) {
    const double a = static_cast<double>(i) / (T_seq - 1);
    FactorSpec s = base;
    if (factor == Factor::rotation)
      s = rotated(base, a * (end_value - start));
    else
      set(s, factor, i == T_seq - 1 ? end_value : start + a * (end_value - start));
    seq.specs.push_back(s);
    Tensor img = render(s, size, channels);
    std::copy(img.data.begin(), img.data.end(), seq.images.data.begin() + static_cast<std::int64_t>(i * per));
  }
  return seq;
}

double factor_delta(Factor f) {
  switch (f) {
    case Factor::x_pos:
    case Factor::y_pos:
    case Factor::hue: return 0.5;
    case Factor::scale: return 0.4;
    case Factor::rotation: return std::numbers::pi / 2;
    case Factor::shape: break;
  }
  fail(ErrorKind::usage, "no sequence delta for factor " + std::string(to_string(f)));
}

FactorSpec random_spec(std::mt19937_64& rng, int channels) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FactorSpec s;
  s.x_pos = u(rng);
  s.y_pos = u(rng);
  s.scale = 0.3 + 0.7 * u(rng);
  s.rotation = 0.0;
  s.shape = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
  s.hue = channels == 3 ? u(rng) : 0.0;
  return s;
}

TransformSequence random_sequence(std::mt19937_64& rng, Factor factor, int T_seq, int size, int channels,
                                  ShapeKind shape) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FactorSpec s;
  s.x_pos = 0.2 + 0.6 * u(rng);
  s.y_pos = 0.2 + 0.6 * u(rng);
  s.scale = 0.5 + 0.3 * u(rng);
  s.hue = channels == 3 ? u(rng) : 0.0;
  s.shape = shape;
  const double delta = factor_delta(factor);
  double start = 0;
  switch (factor) {
    case Factor::x_pos:
    case Factor::y_pos:
    case Factor::hue: start = (1.0 - delta) * u(rng); break;
    case Factor::scale: start = 0.3 + (0.7 - delta) * u(rng); break;
    case Factor::rotation: start = kTwoPi * u(rng); break;
    case Factor::shape: break;
  }
  if (factor == Factor::rotation) {
    s.rotation = rotated(s, start).rotation;
    return make_sequence(s, factor, s.rotation + delta, T_seq, size, channels);
  }
  set(s, factor, start);
  return make_sequence(s, factor, start + delta, T_seq, size, channels);
}

Tensor take_rows(const Tensor& t, const std::vector<std::int64_t>& rows) {
  if (t.shape.empty()) fail(ErrorKind::shape, "take_rows: scalar tensor");
  const std::int64_t n = t.shape[0], per = n > 0 ? t.size() / n : 0;
  ad::Shape s = t.shape;
  s[0] = static_cast<std::int64_t>(rows.size());
  Tensor out = Tensor::zeros(s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) fail(ErrorKind::range, "take_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(t.data.begin() + rows[i] * per, per, out.data.begin() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

Tensor random_images(std::mt19937_64& rng, std::int64_t n, int size, int channels) {
  Tensor out = Tensor::zeros({n, channels, size, size});
  const std::int64_t per = static_cast<std::int64_t>(channels) * size * size;
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor img = render(random_spec(rng, channels), size, channels);
    std::copy(img.data.begin(), img.data.end(), out.data.begin() + i * per);
  }
  return out;
}

}  // namespace pft::data
