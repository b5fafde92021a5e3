#include "uavpd/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "uavpd/autodiff.hpp"
#include "uavpd/errors.hpp"

namespace uavpd {

Tensor load_image_rgb01(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH);
  if (m.empty()) throw IoError("cannot decode image: " + path.string());
  float scale = m.depth() == CV_16U ? 1.0f / 65535.0f : 1.0f / 255.0f;
  Tensor out({m.rows, m.cols, 3});
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      // OpenCV stores BGR.
      if (m.depth() == CV_16U) {
        const auto& px = m.at<cv::Vec3w>(y, x);
        out.at3(y, x, 0) = px[2] * scale;
        out.at3(y, x, 1) = px[1] * scale;
        out.at3(y, x, 2) = px[0] * scale;
      } else {
        const auto& px = m.at<cv::Vec3b>(y, x);
        out.at3(y, x, 0) = px[2] * scale;
        out.at3(y, x, 1) = px[1] * scale;
        out.at3(y, x, 2) = px[0] * scale;
      }
    }
  return out;
}

void save_image_rgb01(const std::filesystem::path& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(2) != 3) throw ContractViolation("save_image_rgb01: expects HxWx3");
  int h = img.dim(0), w = img.dim(1);
  cv::Mat m(h, w, CV_16UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto q = [&](int c) {
        float v = img.at3(y, x, c);
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        return static_cast<uint16_t>(v * 65535.0f + 0.5f);
      };
      m.at<cv::Vec3w>(y, x) = cv::Vec3w(q(2), q(1), q(0));
    }
  if (!cv::imwrite(path.string(), m))
    throw IoError("cannot write image: " + path.string());
}

Tensor resize_image_bilinear(const Tensor& hwc, int out_h, int out_w) {
  if (hwc.dim(0) == out_h && hwc.dim(1) == out_w) return hwc;
  return ad::resize_bilinear(ad::constant(hwc), out_h, out_w)->value;
}

Tensor center_crop_square(const Tensor& hwc) {
  int h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
  int side = std::min(h, w);
  if (h == w) return hwc;
  int y0 = (h - side) / 2, x0 = (w - side) / 2;
  Tensor out({side, side, c});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int ch = 0; ch < c; ++ch) out.at3(y, x, ch) = hwc.at3(y0 + y, x0 + x, ch);
  return out;
}

}  // namespace uavpd
