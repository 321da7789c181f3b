#pragma once

// Fixation-dataset ingestion, preprocessing, fixation blurring, and the
// synthetic desk-scale generator.
//
// On-disk layout:  root/<split>/{images,salmaps[,fixmaps]}/<id>.png
//   images/  8-bit 3-channel frames
//   salmaps/ 8-bit grayscale saliency maps (scaled by 1/255 on load)
//   fixmaps/ optional 8-bit grayscale fixation masks (threshold 128)
// All three files of one id share a single resolution. A manifest.json is
// written next to the splits by the generator.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "salm2/tensor.hpp"

namespace salm2 {

struct FrameSample {
  std::string id;
  int64_t height = 0, width = 0;
  std::vector<float> image;        // [3, H, W], RGB in [0, 1]
  std::vector<float> saliency_gt;  // [H, W] in [0, 1]
  std::vector<uint8_t> fixation;   // [H, W] binary; empty when absent
  bool has_fixation() const { return !fixation.empty(); }
};

struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<std::string> ids;
  bool has_fixmaps = false;
  nlohmann::json to_json() const;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<FrameSample> samples;  // deterministic id-sorted order
  bool has_fixmaps() const { return manifest.has_fixmaps; }
};

// Deterministic id-sorted load. Missing salmaps (or fixmaps when the
// directory exists) abort with the offending ids listed.
Dataset load_dataset(const std::string& root, const std::string& split);

// Raw RGB image in [0,1]. Errors on unreadable files or non-3-channel data.
struct RawImage {
  int64_t height = 0, width = 0;
  std::vector<float> rgb;  // [3, H, W]
};
RawImage load_image_rgb(const std::string& path);

// Bilinear resize to out x out, then per-channel standardization with fixed
// constants mean 0.5 / scale 0.5. Returns [3, out, out].
std::vector<float> preprocess(const RawImage& img, int64_t out_size = 256);

// Bilinear resize of a single-channel map.
std::vector<float> resize_map(const std::vector<float>& map, int64_t h, int64_t w, int64_t oh,
                              int64_t ow);

// Gaussian blur of a binary fixation mask, max-normalized to [0,1].
// Requires at least one set pixel.
std::vector<float> blur_fixations(const std::vector<uint8_t>& mask, int64_t h, int64_t w,
                                  double sigma = 10.0);

// Synthetic dataset: smooth background, 1-3 high-contrast blobs, 3 fixation
// points on blob centers, salmap = blurred fixations. Deterministic per seed.
DatasetManifest generate_synthetic(int64_t n, uint64_t seed, const std::string& out_root,
                                   const std::string& split = "train", int64_t size = 256,
                                   double sigma = 10.0);

// PNG output helpers (atomic: encode to memory, write temp, rename).
void save_gray_png(const std::string& path, const std::vector<float>& map, int64_t h, int64_t w);
void save_rgb_png(const std::string& path, const std::vector<float>& rgb, int64_t h, int64_t w);

// Fixed 256-entry heat lookup used by the overlay command:
//   r = clamp(1.5 - |4v-3|, 0, 1), g = clamp(1.5 - |4v-2|, 0, 1),
//   b = clamp(1.5 - |4v-1|, 0, 1)  for v = i / 255.
const std::vector<std::array<uint8_t, 3>>& heat_lut();

// Saliency heat-blended onto the frame with alpha 0.5, at the frame's size.
std::vector<float> overlay_saliency(const RawImage& frame, const std::vector<float>& saliency,
                                    int64_t sal_h, int64_t sal_w);

}  // namespace salm2
