#pragma once

// Training-time photometric and geometric augmentation of HWC images.

#include "v2e/random.hpp"
#include "v2e/types.hpp"

namespace v2e {

struct AugmentConfig {
  bool enabled = false;
  double flip = 0.5;          // probability of a horizontal flip
  double max_shift = 0.06;    // fraction of width/height
  double max_zoom = 0.1;      // scale in [1 - z, 1 + z]
  double brightness = 0.2;    // additive, in pixel units
  double contrast = 0.2;      // multiplicative around the mean
  double downscale = 0.5;     // probability of a down-and-up resample
  double min_downscale = 0.35;
  double erase = 0.5;         // probability of erasing one rectangle
};

// Same size as the input. Deterministic in (image, config, rng state).
Image augment_image(const Image& image, const AugmentConfig& cfg, Rng& rng);

}  // namespace v2e
