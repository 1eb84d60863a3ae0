#include "stylesplit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <thread>

namespace stylesplit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Overlay { Clean, Tint, Diffusion, Grain, Streaks };

Overlay overlay_of(std::size_t style) {
  if (style == 0) return Overlay::Clean;
  return static_cast<Overlay>(1 + (style - 1) / 2);
}

int level_of(std::size_t style) { return style == 0 ? 0 : 1 + static_cast<int>((style - 1) % 2); }

bool inside(std::size_t shape, double u, double v) {
  switch (shape) {
    case 0:  // circle
      return u * u + v * v <= 1.0;
    case 1: {  // upward triangle with vertices (0,-1), (+-0.87,0.5)
      if (v > 0.5) return false;
      double half = 0.87 * (v + 1.0) / 1.5;
      return v >= -1.0 && std::abs(u) <= half;
    }
    case 2:  // square
      return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    default:  // cross
      return (std::abs(u) <= 0.3 && std::abs(v) <= 0.95) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.95);
  }
}

void gaussian_blur(std::vector<double>& img, std::size_t s, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  std::vector<double> tmp(img.size());
  auto clampi = [s](long i) { return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(s) - 1)); };
  for (std::size_t c = 0; c < 3; ++c) {
    double* p = img.data() + c * s * s;
    double* t = tmp.data() + c * s * s;
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * p[y * s + clampi(static_cast<long>(x) + i)];
        t[y * s + x] = acc;
      }
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * t[clampi(static_cast<long>(y) + i) * s + x];
        p[y * s + x] = acc;
      }
  }
}

void check_config(const DatasetConfig& cfg) {
  if (cfg.content_classes == 0 || cfg.content_classes > kContentClasses || cfg.style_classes == 0 ||
      cfg.style_classes > kStyleClasses || cfg.image_size < 8) {
    throw std::invalid_argument("dataset: unsupported configuration");
  }
}

}  // namespace

const char* content_class_name(std::size_t id) {
  static const char* names[] = {"circle", "triangle", "square", "cross"};
  if (id >= kContentClasses) throw std::out_of_range("content class " + std::to_string(id));
  return names[id];
}

std::string style_class_name(std::size_t id) {
  static const char* kinds[] = {"clean", "tint", "diffusion", "grain", "streaks"};
  if (id >= kStyleClasses) throw std::out_of_range("style class " + std::to_string(id));
  if (id == 0) return kinds[0];
  return std::string(kinds[static_cast<int>(overlay_of(id))]) + "-" + std::to_string(level_of(id));
}

std::uint64_t sample_seed(std::uint64_t run_seed, std::uint64_t index) {
  return splitmix64(run_seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

SyntheticSample render_sample(std::uint64_t seed, const DatasetConfig& cfg) {
  check_config(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  SyntheticSample out;
  out.seed = seed;
  out.content_label = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, cfg.content_classes - 1)(rng));
  out.style_label = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, cfg.style_classes - 1)(rng));

  const std::size_t s = cfg.image_size;
  const double sd = static_cast<double>(s);
  const double px = sd / 64.0;  // overlay sizes are specified at 64 px

  double bg = uniform(-0.7, -0.1), fg = uniform(0.2, 0.8);
  double cx = uniform(0.32, 0.68) * sd, cy = uniform(0.32, 0.68) * sd;
  double radius = uniform(0.18, 0.3) * sd;
  double angle = uniform(-0.3, 0.3);
  double ca = std::cos(angle), sa = std::sin(angle);
  auto shape = static_cast<std::size_t>(out.content_label);

  std::vector<double> img(3 * s * s);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          double dx = (static_cast<double>(x) + 0.25 + 0.5 * sx - cx) / radius;
          double dy = (static_cast<double>(y) + 0.25 + 0.5 * sy - cy) / radius;
          if (inside(shape, ca * dx + sa * dy, -sa * dx + ca * dy)) ++hits;
        }
      double g = bg + (fg - bg) * hits / 4.0;
      for (std::size_t c = 0; c < 3; ++c) img[c * s * s + y * s + x] = g;
    }
  }

  auto style = static_cast<std::size_t>(out.style_label);
  int level = level_of(style);
  switch (overlay_of(style)) {
    case Overlay::Clean:
      break;
    case Overlay::Tint: {
      double t = (level == 1 ? 0.2 : 0.4) * uniform(0.85, 1.15);
      const double shift[3] = {t, 0.3 * t, -t};
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < s * s; ++i) img[c * s * s + i] = img[c * s * s + i] * (1.0 - 0.2 * t) + shift[c];
      break;
    }
    case Overlay::Diffusion: {
      double sigma = (level == 1 ? 1.2 : 2.4) * px * uniform(0.9, 1.1);
      double veil = (level == 1 ? 0.2 : 0.4) * uniform(0.9, 1.1);
      gaussian_blur(img, s, sigma);
      for (auto& v : img) v = (1.0 - veil) * v + veil * 0.7;
      break;
    }
    case Overlay::Grain: {
      std::normal_distribution<double> noise(0.0, level == 1 ? 0.1 : 0.22);
      for (std::size_t i = 0; i < s * s; ++i) {
        double n = noise(rng);
        for (std::size_t c = 0; c < 3; ++c) img[c * s * s + i] += n;
      }
      break;
    }
    case Overlay::Streaks: {
      int count = level == 1 ? 8 : 16;
      double intensity = level == 1 ? 0.45 : 0.7;
      double width = 0.7 * std::max(px, 0.5);
      double theta = uniform(75.0 - 8.0, 75.0 + 8.0) * std::numbers::pi / 180.0;
      double ux = std::cos(theta), uy = std::sin(theta);
      std::vector<double> add(s * s, 0.0);
      for (int k = 0; k < count; ++k) {
        double x0 = uniform(-0.1, 1.1) * sd, y0 = uniform(-0.1, 1.1) * sd;
        double len = uniform(0.25, 0.5) * sd;
        for (std::size_t y = 0; y < s; ++y)
          for (std::size_t x = 0; x < s; ++x) {
            double rx = static_cast<double>(x) + 0.5 - x0, ry = static_cast<double>(y) + 0.5 - y0;
            double along = std::clamp(rx * ux + ry * uy, 0.0, len);
            double ex = rx - along * ux, ey = ry - along * uy;
            double d2 = ex * ex + ey * ey;
            add[y * s + x] = std::max(add[y * s + x], std::exp(-0.5 * d2 / (width * width)));
          }
      }
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < s * s; ++i) img[c * s * s + i] += intensity * add[i];
      break;
    }
  }
  out.image.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) out.image[i] = static_cast<float>(std::clamp(img[i], -1.0, 1.0));
  return out;
}

std::vector<SyntheticSample> generate_dataset(std::size_t n, const DatasetConfig& cfg, std::uint64_t run_seed) {
  check_config(cfg);
  std::vector<SyntheticSample> out(n);
  // Every sample has its own seed, so the worker count cannot change the result.
  std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 16);
  workers = std::min(workers, std::max<std::size_t>(1, n / 256));
  auto render_range = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) out[i] = render_sample(sample_seed(run_seed, i), cfg);
  };
  if (workers == 1) {
    render_range(0);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(render_range, w);
  for (auto& t : pool) t.join();
  return out;
}

Tensor batch_images(const std::vector<SyntheticSample>& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("batch_images: empty index list");
  std::size_t per = data.at(indices.front()).image.size();
  auto s = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(per / 3))));
  std::vector<double> flat;
  flat.reserve(indices.size() * per);
  for (auto i : indices) {
    const auto& img = data.at(i).image;
    flat.insert(flat.end(), img.begin(), img.end());
  }
  return Tensor({indices.size(), 3, s, s}, std::move(flat));
}

std::vector<int> content_labels(const std::vector<SyntheticSample>& data, const std::vector<std::size_t>& indices) {
  std::vector<int> out;
  for (auto i : indices) out.push_back(data.at(i).content_label);
  return out;
}

std::vector<int> style_labels(const std::vector<SyntheticSample>& data, const std::vector<std::size_t>& indices) {
  std::vector<int> out;
  for (auto i : indices) out.push_back(data.at(i).style_label);
  return out;
}

}  // namespace stylesplit
