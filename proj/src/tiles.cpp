#include "batmil/tiles.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>

#include "batmil/error.hpp"

namespace batmil::tiles {

std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const unsigned v = 299u * r + 587u * g + 114u * b;
  // Half-way cases (v % 1000 == 500) round up, matching round() on the real value.
  return static_cast<std::uint8_t>((v + 500u) / 1000u);
}

GrayImage luminance(const RgbImage& img) {
  GrayImage g{img.width, img.height, std::vector<std::uint8_t>(img.width * img.height)};
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    const auto* p = img.pixels.data() + 3 * i;
    g.pixels[i] = luminance(p[0], p[1], p[2]);
  }
  return g;
}

std::array<std::uint64_t, 256> histogram(const GrayImage& img) {
  std::array<std::uint64_t, 256> h{};
  for (auto v : img.pixels) ++h[v];
  return h;
}

int otsu_threshold(const std::array<std::uint64_t, 256>& hist) {
  using i128 = __int128;
  std::uint64_t total = 0;
  i128 sum_all = 0;
  int lowest = -1;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    sum_all += static_cast<i128>(i) * hist[i];
    if (lowest < 0 && hist[i] > 0) lowest = i;
  }
  if (total == 0) throw DomainError("otsu_threshold: empty histogram");
  // Between-class variance times total^2 is diff^2 / (w0*w1) with
  // diff = sum_all*w0 - total*sum0 exact in 128-bit integers. Thresholds that
  // split the same populated bins produce bit-identical scores, so ties are
  // real ties and '>' keeps the lowest one.
  std::uint64_t w0 = 0;
  i128 sum0 = 0;
  int best = lowest;
  long double best_score = -1.0L;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += static_cast<i128>(t) * hist[t];
    if (t < lowest) continue;
    const std::uint64_t w1 = total - w0;
    long double score = 0.0L;
    if (w0 > 0 && w1 > 0) {
      const auto diff = static_cast<long double>(sum_all * static_cast<i128>(w0) - static_cast<i128>(total) * sum0);
      score = diff * diff / (static_cast<long double>(w0) * static_cast<long double>(w1));
    }
    if (score > best_score) {
      best_score = score;
      best = t;
    }
  }
  return best;
}

std::vector<std::uint8_t> foreground_mask(const GrayImage& gray, int threshold) {
  std::vector<std::uint8_t> m(gray.pixels.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = gray.pixels[i] <= threshold ? 1 : 0;
  return m;
}

std::vector<TileOrigin> tile_grid(std::size_t width, std::size_t height, std::size_t tile, std::string* warning) {
  if (tile == 0) throw ShapeError("tile_grid: tile size must be positive");
  std::vector<TileOrigin> out;
  const std::size_t nx = width / tile, ny = height / tile;
  if (nx == 0 || ny == 0) {
    if (warning) {
      *warning = "image " + std::to_string(width) + "x" + std::to_string(height) + " is smaller than one " +
                 std::to_string(tile) + "-pixel tile";
    }
    return out;
  }
  for (std::size_t r = 0; r < ny; ++r)
    for (std::size_t c = 0; c < nx; ++c) out.push_back({r, c, c * tile, r * tile});
  return out;
}

std::string to_string(Verdict v) { return v == Verdict::keep ? "keep" : "reject"; }

std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::none: return "-";
    case RejectReason::occupancy: return "occupancy";
    case RejectReason::low_std: return "low_std";
    case RejectReason::zero_pixels: return "zero_pixels";
  }
  return "?";
}

TileReport tile_filter(const RgbImage& tile, const std::vector<std::uint8_t>& mask, std::size_t row, std::size_t col,
                       std::size_t tile_size) {
  if (tile.width != tile_size || tile.height != tile_size || tile.pixels.size() != tile_size * tile_size * 3) {
    throw ShapeError("tile_filter: expected " + std::to_string(tile_size) + "x" + std::to_string(tile_size) +
                     " RGB tile, got " + std::to_string(tile.width) + "x" + std::to_string(tile.height));
  }
  const std::uint64_t n = tile_size * tile_size;
  if (mask.size() != n) throw ShapeError("tile_filter: mask size does not match tile");

  std::uint64_t fg = 0, zeros = 0;
  std::uint64_t sum[3] = {0, 0, 0}, sum2[3] = {0, 0, 0};
  for (std::uint64_t i = 0; i < n; ++i) {
    fg += mask[i] ? 1 : 0;
    const auto* p = tile.pixels.data() + 3 * i;
    if (p[0] == 0 && p[1] == 0 && p[2] == 0) ++zeros;
    for (int ch = 0; ch < 3; ++ch) {
      sum[ch] += p[ch];
      sum2[ch] += static_cast<std::uint64_t>(p[ch]) * p[ch];
    }
  }
  TileReport rep;
  rep.row = row;
  rep.col = col;
  rep.occupancy = static_cast<double>(fg) / static_cast<double>(n);
  rep.zero_fraction = static_cast<double>(zeros) / static_cast<double>(n);
  // Population stddev per channel: sqrt(n*sum2 - sum^2) / n with an exact integer radicand.
  double std_sum = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    const std::uint64_t rad = n * sum2[ch] - sum[ch] * sum[ch];
    std_sum += std::sqrt(static_cast<double>(rad)) / static_cast<double>(n);
  }
  rep.mean_std = std_sum / 3.0;

  if (fg * 10 < n) {
    rep.verdict = Verdict::reject;
    rep.reason = RejectReason::occupancy;
  } else if (rep.mean_std < 5.0) {
    rep.verdict = Verdict::reject;
    rep.reason = RejectReason::low_std;
  } else if (zeros * 2 > n) {
    rep.verdict = Verdict::reject;
    rep.reason = RejectReason::zero_pixels;
  }
  return rep;
}

RgbImage crop(const RgbImage& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  if (x + w > img.width || y + h > img.height) throw ShapeError("crop: region outside image");
  RgbImage out(w, h);
  for (std::size_t r = 0; r < h; ++r) {
    const auto* src = img.at(x, y + r);
    std::copy(src, src + 3 * w, out.at(0, r));
  }
  return out;
}

std::vector<std::uint8_t> crop_mask(const std::vector<std::uint8_t>& mask, std::size_t width, std::size_t x,
                                    std::size_t y, std::size_t w, std::size_t h) {
  std::vector<std::uint8_t> out(w * h);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = mask[(y + r) * width + x + c];
  return out;
}

PipelineResult run_pipeline(const RgbImage& img, std::size_t tile_size) {
  PipelineResult res;
  const GrayImage gray = luminance(img);
  res.threshold = img.pixels.empty() ? 0 : otsu_threshold(histogram(gray));
  const auto mask = foreground_mask(gray, res.threshold);
  for (const auto& o : tile_grid(img.width, img.height, tile_size, &res.warning)) {
    RgbImage t = crop(img, o.x, o.y, tile_size, tile_size);
    TileReport rep = tile_filter(t, crop_mask(mask, img.width, o.x, o.y, tile_size, tile_size), o.row, o.col, tile_size);
    if (rep.verdict == Verdict::keep) res.kept.push_back(std::move(t));
    res.reports.push_back(rep);
  }
  return res;
}

std::string report_header() { return "row\tcol\tverdict\treason\toccupancy\tmean_std\tzero_fraction\n"; }

std::string report_row(const TileReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%zu\t%s\t%s\t%.6f\t%.6f\t%.6f\n", r.row, r.col, to_string(r.verdict).c_str(),
                to_string(r.reason).c_str(), r.occupancy, r.mean_std, r.zero_fraction);
  return buf;
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw FormatError(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage out(image.width, image.height);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (!png_image_write_to_file(&image, tmp.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(path.string() + ": " + image.message);
  std::filesystem::rename(tmp, path);
}

}  // namespace batmil::tiles
