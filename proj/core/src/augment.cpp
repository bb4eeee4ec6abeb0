#include "v2e/augment.hpp"

#include <algorithm>

#include <opencv2/imgproc.hpp>

namespace v2e {

namespace {

cv::Mat to_mat(const Image& im) {
  cv::Mat m(im.height, im.width, CV_32FC3);
  std::copy(im.pixels.begin(), im.pixels.end(), m.ptr<float>());
  return m;
}

}  // namespace

Image augment_image(const Image& image, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return image;
  const int h = image.height, w = image.width;
  cv::Mat m = to_mat(image);

  if (rng.uniform() < cfg.flip) cv::flip(m, m, 1);

  const double zoom = 1.0 + rng.uniform(-cfg.max_zoom, cfg.max_zoom);
  const double dx = rng.uniform(-cfg.max_shift, cfg.max_shift) * w;
  const double dy = rng.uniform(-cfg.max_shift, cfg.max_shift) * h;
  cv::Mat affine = cv::getRotationMatrix2D(cv::Point2f(w / 2.0f, h / 2.0f), 0.0, zoom);
  affine.at<double>(0, 2) += dx;
  affine.at<double>(1, 2) += dy;
  cv::warpAffine(m, m, affine, m.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);

  if (rng.uniform() < cfg.downscale) {
    const double f = rng.uniform(cfg.min_downscale, 1.0);
    cv::Mat small;
    cv::resize(m, small, cv::Size(std::max(4, static_cast<int>(w * f)), std::max(4, static_cast<int>(h * f))), 0, 0,
               cv::INTER_AREA);
    cv::resize(small, m, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
  }

  const double c = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast);
  const double b = rng.uniform(-cfg.brightness, cfg.brightness);
  const cv::Scalar mean = cv::mean(m);
  m = (m - mean) * c + mean + cv::Scalar::all(b);

  if (rng.uniform() < cfg.erase) {
    const int eh = static_cast<int>(h * rng.uniform(0.1, 0.35));
    const int ew = static_cast<int>(w * rng.uniform(0.1, 0.5));
    const int y = rng.below(std::max(1, h - eh)), x = rng.below(std::max(1, w - ew));
    m(cv::Rect(x, y, std::max(ew, 1), std::max(eh, 1)))
        .setTo(cv::Scalar(rng.uniform(), rng.uniform(), rng.uniform()));
  }

  Image out{h, w, {}};
  out.pixels.resize(image.pixels.size());
  const float* p = m.ptr<float>();
  for (size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = std::clamp(p[i], 0.0f, 1.0f);
  return out;
}

}  // namespace v2e
