#pragma once

// Deterministic synthetic aerial/ground person fixtures.
//
// Every identity is a sprite figure whose appearance is driven entirely by
// its 15 soft-biometric labels. Ground renderings (CCTV, wearable) are
// frontal at full canvas resolution; aerial renderings are foreshortened
// from above, downscaled and blurred.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "v2e/attributes.hpp"
#include "v2e/types.hpp"

namespace v2e {

struct FixtureOptions {
  uint64_t seed = 7;
  int n_ids = 4;                  // total identities, split half train / half test
  int images_per_id_per_platform = 2;
  // Fraction of identities generated as a copy of the previous identity
  // with exactly one soft label changed.
  double twin_fraction = 0.25;
  int canvas_height = 128;
  int canvas_width = 64;
};

struct FixtureIdentity {
  int person_id = 0;
  bool train = true;
  std::vector<int> categories;  // per soft label
  int twin_of = -1;             // identity this one was derived from
  int changed_label = -1;       // label that differs from twin_of
};

struct FixtureRecord {
  std::string file;  // relative to the fixture root
  int person_id = 0;
  CameraPlatform platform = CameraPlatform::Aerial;
  int sequence = 0;
  bool train = true;
};

struct FixtureManifest {
  uint64_t seed = 0;
  int n_ids = 0;
  int images_per_id_per_platform = 0;
  double twin_fraction = 0;
  std::vector<FixtureIdentity> identities;
  std::vector<FixtureRecord> records;

  std::string serialize(const AttributeSchema& schema) const;
  static FixtureManifest parse(const std::string& text, const AttributeSchema& schema);
};

// Draws identity labels without touching the filesystem.
std::vector<FixtureIdentity> plan_identities(const FixtureOptions& options, const AttributeSchema& schema);

// Renders one image of an identity. Deterministic in (categories, platform, nuisance_seed).
Image render_person(const AttributeSchema& schema, const std::vector<int>& categories, CameraPlatform platform,
                    uint64_t nuisance_seed, int canvas_height, int canvas_width);

// Writes train/, test/, attributes.csv, attribute.schema and manifest.txt
// under `out_dir` and returns the manifest.
FixtureManifest generate_fixture(const FixtureOptions& options, const std::string& out_dir);

}  // namespace v2e
