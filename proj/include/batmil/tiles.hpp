#pragma once

// Tile-quality pipeline on 8-bit RGB rasters: luminance, Otsu foreground
// mask, 224-pixel grid and the three rejection filters.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace batmil::tiles {

inline constexpr std::size_t kTileSize = 224;

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}
  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + 3 * (y * width + x); }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + 3 * (y * width + x); }
  void set(std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Rec.601 luma rounded to nearest: (299 r + 587 g + 114 b + 500) / 1000.
std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b);
GrayImage luminance(const RgbImage& img);

std::array<std::uint64_t, 256> histogram(const GrayImage& img);

/// Threshold t maximizing between-class variance for classes {<= t}, {> t};
/// ties resolve to the lowest t. Throws DomainError on an empty histogram.
int otsu_threshold(const std::array<std::uint64_t, 256>& hist);

/// Foreground (tissue) = luminance <= threshold.
std::vector<std::uint8_t> foreground_mask(const GrayImage& gray, int threshold);

struct TileOrigin {
  std::size_t row;  // grid row index
  std::size_t col;  // grid column index
  std::size_t x;    // pixel origin
  std::size_t y;
};

/// floor(W/tile)·floor(H/tile) origins in row-major order. An image smaller
/// than one tile yields an empty list and sets *warning when given.
std::vector<TileOrigin> tile_grid(std::size_t width, std::size_t height, std::size_t tile = kTileSize,
                                  std::string* warning = nullptr);

enum class Verdict { keep, reject };
enum class RejectReason { none, occupancy, low_std, zero_pixels };

std::string to_string(Verdict v);
std::string to_string(RejectReason r);

struct TileReport {
  std::size_t row = 0;
  std::size_t col = 0;
  Verdict verdict = Verdict::keep;
  RejectReason reason = RejectReason::none;
  double occupancy = 0.0;
  double mean_std = 0.0;
  double zero_fraction = 0.0;
};

/// Filters in order: occupancy < 10 %, mean per-channel stddev < 5,
/// joint-zero pixels > 50 %. Threshold comparisons use exact integer
/// arithmetic. Throws ShapeError unless tile is tile×tile and the mask
/// matches.
TileReport tile_filter(const RgbImage& tile, const std::vector<std::uint8_t>& mask, std::size_t row = 0,
                       std::size_t col = 0, std::size_t tile_size = kTileSize);

RgbImage crop(const RgbImage& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h);
std::vector<std::uint8_t> crop_mask(const std::vector<std::uint8_t>& mask, std::size_t width, std::size_t x,
                                    std::size_t y, std::size_t w, std::size_t h);

struct PipelineResult {
  int threshold = 0;
  std::vector<TileReport> reports;
  std::vector<RgbImage> kept;  // parallel to the keep rows of reports
  std::string warning;
};

PipelineResult run_pipeline(const RgbImage& img, std::size_t tile_size = kTileSize);

std::string report_header();
std::string report_row(const TileReport& r);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace batmil::tiles
