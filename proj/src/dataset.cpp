#include "salm2/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "salm2/archive.hpp"
#include "salm2/errors.hpp"
#include "salm2/rng.hpp"

namespace fs = std::filesystem;

namespace salm2 {

namespace {

std::vector<std::string> list_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

cv::Mat read_png(const fs::path& path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw DataError("cannot decode " + path.string());
  return m;
}

void write_png_atomic(const std::string& path, const cv::Mat& m) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", m, buf)) throw DataError("png encode failed for " + path);
  atomic_write_file(path, std::string(buf.begin(), buf.end()));
}

}  // namespace

nlohmann::json DatasetManifest::to_json() const {
  return {{"split", split}, {"ids", ids}, {"has_fixmaps", has_fixmaps}};
}

RawImage load_image_rgb(const std::string& path) {
  cv::Mat m = read_png(path, cv::IMREAD_UNCHANGED);
  if (m.channels() != 3)
    throw DataError(path + " has " + std::to_string(m.channels()) + " channels, expected 3");
  if (m.depth() != CV_8U) throw DataError(path + " is not 8-bit");
  RawImage out;
  out.height = m.rows;
  out.width = m.cols;
  out.rgb.resize(static_cast<size_t>(3 * m.rows * m.cols));
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const cv::Vec3b px = m.at<cv::Vec3b>(y, x);  // BGR
      out.rgb[(0 * m.rows + y) * m.cols + x] = px[2] / 255.0f;
      out.rgb[(1 * m.rows + y) * m.cols + x] = px[1] / 255.0f;
      out.rgb[(2 * m.rows + y) * m.cols + x] = px[0] / 255.0f;
    }
  return out;
}

Dataset load_dataset(const std::string& root, const std::string& split) {
  const fs::path base = fs::path(root) / split;
  const fs::path images = base / "images";
  const fs::path salmaps = base / "salmaps";
  const fs::path fixmaps = base / "fixmaps";
  if (!fs::is_directory(images)) throw DataError("missing directory " + images.string());
  if (!fs::is_directory(salmaps)) throw DataError("missing directory " + salmaps.string());
  const bool has_fix = fs::is_directory(fixmaps);

  Dataset ds;
  ds.manifest.root = root;
  ds.manifest.split = split;
  ds.manifest.has_fixmaps = has_fix;
  ds.manifest.ids = list_ids(images);
  if (ds.manifest.ids.empty()) throw DataError("no images in " + images.string());

  std::vector<std::string> missing_sal, missing_fix;
  for (const auto& id : ds.manifest.ids) {
    if (!fs::exists(salmaps / (id + ".png"))) missing_sal.push_back(id);
    if (has_fix && !fs::exists(fixmaps / (id + ".png"))) missing_fix.push_back(id);
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!missing_sal.empty()) throw DataError("missing salmaps for ids: " + join(missing_sal));
  if (!missing_fix.empty()) throw DataError("missing fixmaps for ids: " + join(missing_fix));

  for (const auto& id : ds.manifest.ids) {
    FrameSample s;
    s.id = id;
    RawImage img = load_image_rgb((images / (id + ".png")).string());
    s.height = img.height;
    s.width = img.width;
    s.image = std::move(img.rgb);

    cv::Mat sal = read_png(salmaps / (id + ".png"), cv::IMREAD_GRAYSCALE);
    if (sal.rows != s.height || sal.cols != s.width)
      throw DataError("salmap size mismatch for id " + id);
    s.saliency_gt.resize(static_cast<size_t>(s.height * s.width));
    for (int y = 0; y < sal.rows; ++y)
      for (int x = 0; x < sal.cols; ++x)
        s.saliency_gt[y * s.width + x] = sal.at<uint8_t>(y, x) / 255.0f;

    if (has_fix) {
      cv::Mat fix = read_png(fixmaps / (id + ".png"), cv::IMREAD_GRAYSCALE);
      if (fix.rows != s.height || fix.cols != s.width)
        throw DataError("fixmap size mismatch for id " + id);
      s.fixation.resize(static_cast<size_t>(s.height * s.width));
      int64_t count = 0;
      for (int y = 0; y < fix.rows; ++y)
        for (int x = 0; x < fix.cols; ++x) {
          const uint8_t v = fix.at<uint8_t>(y, x) >= 128 ? 1 : 0;
          s.fixation[y * s.width + x] = v;
          count += v;
        }
      if (count == 0) throw DataError("fixmap for id " + id + " has no fixations");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<float> resize_map(const std::vector<float>& map, int64_t h, int64_t w, int64_t oh,
                              int64_t ow) {
  cv::Mat src(static_cast<int>(h), static_cast<int>(w), CV_32F,
              const_cast<float*>(map.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(static_cast<int>(ow), static_cast<int>(oh)), 0, 0,
             cv::INTER_LINEAR);
  std::vector<float> out(static_cast<size_t>(oh * ow));
  for (int y = 0; y < dst.rows; ++y)
    for (int x = 0; x < dst.cols; ++x) out[y * ow + x] = dst.at<float>(y, x);
  return out;
}

std::vector<float> preprocess(const RawImage& img, int64_t out_size) {
  std::vector<float> out(static_cast<size_t>(3 * out_size * out_size));
  for (int64_t c = 0; c < 3; ++c) {
    std::vector<float> plane(img.rgb.begin() + c * img.height * img.width,
                             img.rgb.begin() + (c + 1) * img.height * img.width);
    auto resized = resize_map(plane, img.height, img.width, out_size, out_size);
    for (int64_t i = 0; i < out_size * out_size; ++i)
      out[c * out_size * out_size + i] = (resized[i] - 0.5f) / 0.5f;
  }
  return out;
}

std::vector<float> blur_fixations(const std::vector<uint8_t>& mask, int64_t h, int64_t w,
                                  double sigma) {
  if (static_cast<int64_t>(mask.size()) != h * w)
    throw ContractViolation("blur_fixations: mask size mismatch");
  if (sigma <= 0) throw ContractViolation("blur_fixations: sigma must be positive");
  int64_t set = 0;
  for (uint8_t v : mask) set += v;
  if (set == 0) throw DataError("blur_fixations: empty fixation mask");

  const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0;
  for (int64_t i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ksum;

  std::vector<double> tmp(static_cast<size_t>(h * w), 0.0), out(static_cast<size_t>(h * w), 0.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!mask[y * w + x]) continue;
      for (int64_t k = -radius; k <= radius; ++k) {
        const int64_t xx = x + k;
        if (xx >= 0 && xx < w) tmp[y * w + xx] += kernel[k + radius];
      }
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double v = tmp[y * w + x];
      if (v == 0.0) continue;
      for (int64_t k = -radius; k <= radius; ++k) {
        const int64_t yy = y + k;
        if (yy >= 0 && yy < h) out[yy * w + x] += v * kernel[k + radius];
      }
    }
  double mx = 0;
  for (double v : out) mx = std::max(mx, v);
  std::vector<float> res(out.size());
  for (size_t i = 0; i < out.size(); ++i) res[i] = static_cast<float>(out[i] / mx);
  return res;
}

void save_gray_png(const std::string& path, const std::vector<float>& map, int64_t h, int64_t w) {
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8U);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      m.at<uint8_t>(static_cast<int>(y), static_cast<int>(x)) = static_cast<uint8_t>(
          std::lround(std::clamp(map[y * w + x], 0.0f, 1.0f) * 255.0f));
  write_png_atomic(path, m);
}

void save_rgb_png(const std::string& path, const std::vector<float>& rgb, int64_t h, int64_t w) {
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      auto& px = m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (int c = 0; c < 3; ++c)
        px[2 - c] = static_cast<uint8_t>(
            std::lround(std::clamp(rgb[(c * h + y) * w + x], 0.0f, 1.0f) * 255.0f));
    }
  write_png_atomic(path, m);
}

DatasetManifest generate_synthetic(int64_t n, uint64_t seed, const std::string& out_root,
                                   const std::string& split, int64_t size, double sigma) {
  if (n < 1) throw ContractViolation("generate_synthetic: n must be >= 1");
  const fs::path base = fs::path(out_root) / split;
  fs::create_directories(base / "images");
  fs::create_directories(base / "salmaps");
  fs::create_directories(base / "fixmaps");

  Rng rng(seed);
  DatasetManifest manifest;
  manifest.root = out_root;
  manifest.split = split;
  manifest.has_fixmaps = true;

  for (int64_t i = 0; i < n; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "%06lld", static_cast<long long>(i));
    const std::string id = idbuf;
    manifest.ids.push_back(id);

    // smooth background from four corner colors
    std::array<std::array<double, 3>, 4> corners;
    for (auto& c : corners)
      for (auto& v : c) v = rng.uniform(0.15, 0.85);
    std::vector<float> img(static_cast<size_t>(3 * size * size));
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        const double fy = static_cast<double>(y) / (size - 1);
        const double fx = static_cast<double>(x) / (size - 1);
        for (int c = 0; c < 3; ++c) {
          const double top = corners[0][c] * (1 - fx) + corners[1][c] * fx;
          const double bot = corners[2][c] * (1 - fx) + corners[3][c] * fx;
          img[(c * size + y) * size + x] = static_cast<float>(top * (1 - fy) + bot * fy);
        }
      }

    // 1-3 high-contrast blobs
    const int64_t blobs = 1 + static_cast<int64_t>(rng.uniform_int(3));
    std::vector<std::pair<int64_t, int64_t>> centers;
    for (int64_t b = 0; b < blobs; ++b) {
      const int64_t margin = size / 8;
      const int64_t cx = margin + static_cast<int64_t>(rng.uniform_int(size - 2 * margin));
      const int64_t cy = margin + static_cast<int64_t>(rng.uniform_int(size - 2 * margin));
      const double radius = rng.uniform(size / 20.0, size / 9.0);
      centers.emplace_back(cy, cx);
      std::array<double, 3> color;
      for (int c = 0; c < 3; ++c) {
        const double bg = img[(c * size + cy) * size + cx];
        color[c] = bg > 0.5 ? rng.uniform(0.0, 0.15) : rng.uniform(0.85, 1.0);
      }
      const int64_t lo_y = std::max<int64_t>(0, cy - static_cast<int64_t>(radius) - 2);
      const int64_t hi_y = std::min<int64_t>(size - 1, cy + static_cast<int64_t>(radius) + 2);
      const int64_t lo_x = std::max<int64_t>(0, cx - static_cast<int64_t>(radius) - 2);
      const int64_t hi_x = std::min<int64_t>(size - 1, cx + static_cast<int64_t>(radius) + 2);
      for (int64_t y = lo_y; y <= hi_y; ++y)
        for (int64_t x = lo_x; x <= hi_x; ++x) {
          const double d = std::sqrt(static_cast<double>((y - cy) * (y - cy) + (x - cx) * (x - cx)));
          const double t = std::clamp(radius - d + 1.0, 0.0, 1.0);  // soft 1px edge
          if (t <= 0) continue;
          for (int c = 0; c < 3; ++c) {
            float& px = img[(c * size + y) * size + x];
            px = static_cast<float>(px * (1 - t) + color[c] * t);
          }
        }
    }

    // 3 fixation points on blob centers
    std::vector<uint8_t> mask(static_cast<size_t>(size * size), 0);
    for (int64_t f = 0; f < 3; ++f) {
      const auto& [cy, cx] = centers[f % centers.size()];
      mask[cy * size + cx] = 1;
    }
    auto salmap = blur_fixations(mask, size, size, sigma);

    save_rgb_png((base / "images" / (id + ".png")).string(), img, size, size);
    save_gray_png((base / "salmaps" / (id + ".png")).string(), salmap, size, size);
    std::vector<float> fix(mask.size());
    for (size_t k = 0; k < mask.size(); ++k) fix[k] = mask[k] ? 1.0f : 0.0f;
    save_gray_png((base / "fixmaps" / (id + ".png")).string(), fix, size, size);
  }

  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["seed"] = seed;
  doc["splits"][split] = manifest.to_json();
  atomic_write_file((fs::path(out_root) / "manifest.json").string(), doc.dump(2));
  return manifest;
}

const std::vector<std::array<uint8_t, 3>>& heat_lut() {
  static const std::vector<std::array<uint8_t, 3>> lut = [] {
    std::vector<std::array<uint8_t, 3>> t(256);
    for (int i = 0; i < 256; ++i) {
      const double v = i / 255.0;
      auto ramp = [](double x) { return std::clamp(x, 0.0, 1.0); };
      t[i] = {static_cast<uint8_t>(std::lround(255 * ramp(1.5 - std::abs(4 * v - 3)))),
              static_cast<uint8_t>(std::lround(255 * ramp(1.5 - std::abs(4 * v - 2)))),
              static_cast<uint8_t>(std::lround(255 * ramp(1.5 - std::abs(4 * v - 1))))};
    }
    return t;
  }();
  return lut;
}

std::vector<float> overlay_saliency(const RawImage& frame, const std::vector<float>& saliency,
                                    int64_t sal_h, int64_t sal_w) {
  auto sal = resize_map(saliency, sal_h, sal_w, frame.height, frame.width);
  const auto& lut = heat_lut();
  std::vector<float> out(frame.rgb.size());
  const int64_t hw = frame.height * frame.width;
  for (int64_t i = 0; i < hw; ++i) {
    const int idx = static_cast<int>(std::lround(std::clamp(sal[i], 0.0f, 1.0f) * 255.0f));
    for (int c = 0; c < 3; ++c)
      out[c * hw + i] = 0.5f * frame.rgb[c * hw + i] + 0.5f * (lut[idx][c] / 255.0f);
  }
  return out;
}

}  // namespace salm2
