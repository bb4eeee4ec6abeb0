#include "v2e/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "v2e/dataset.hpp"
#include "v2e/errors.hpp"
#include "v2e/random.hpp"

namespace fs = std::filesystem;

namespace v2e {

namespace {

using Rgb = cv::Scalar;  // channels in R, G, B order, 0..1

Rgb rgb(int r, int g, int b) { return Rgb(r / 255.0, g / 255.0, b / 255.0); }

// Category lookup by label name; tolerant of schemas lacking a label.
struct Look {
  const AttributeSchema& schema;
  const std::vector<int>& cats;
  std::string category(const std::string& label) const {
    const int li = schema.label_index(label);
    if (li < 0) return {};
    return schema.labels()[static_cast<size_t>(li)].categories[static_cast<size_t>(cats[static_cast<size_t>(li)])];
  }
};

Rgb skin_color(const std::string& ethnicity) {
  if (ethnicity == "black") return rgb(92, 58, 42);
  if (ethnicity == "asian") return rgb(228, 192, 150);
  if (ethnicity == "indian") return rgb(168, 116, 80);
  return rgb(240, 205, 185);
}

Rgb hair_color(const std::string& c) {
  if (c == "brown") return rgb(105, 62, 28);
  if (c == "blonde") return rgb(235, 205, 105);
  if (c == "red") return rgb(195, 72, 28);
  if (c == "grey") return rgb(150, 150, 150);
  if (c == "white") return rgb(245, 245, 245);
  return rgb(18, 18, 18);
}

Rgb cloth_color(const std::string& category) {
  const auto dash = category.rfind('-');
  const std::string tone = dash == std::string::npos ? category : category.substr(dash + 1);
  if (tone == "light") return rgb(218, 216, 200);
  if (tone == "red") return rgb(205, 32, 32);
  if (tone == "blue") return rgb(30, 70, 205);
  return rgb(42, 42, 52);
}

std::string cloth_type(const std::string& category) {
  const auto dash = category.rfind('-');
  return dash == std::string::npos ? category : category.substr(0, dash);
}

Rgb belt_color(const std::string& age) {
  if (age == "child") return rgb(255, 220, 0);
  if (age == "teen") return rgb(0, 205, 205);
  if (age == "young-adult") return rgb(205, 0, 205);
  if (age == "middle-aged") return rgb(125, 125, 0);
  return rgb(255, 255, 255);
}

Rgb shoe_color(const std::string& feet, const Rgb& skin) {
  if (feet == "sneakers") return rgb(250, 250, 250);
  if (feet == "sport-shoes") return rgb(40, 205, 60);
  if (feet == "boots") return rgb(112, 70, 30);
  if (feet == "classic") return rgb(12, 12, 12);
  if (feet == "sandals" || feet == "barefoot") return skin;
  if (feet == "slippers") return rgb(242, 120, 182);
  return rgb(128, 128, 128);
}

Rgb darker(const Rgb& c, double f) { return Rgb(c[0] * f, c[1] * f, c[2] * f); }

cv::Point pt(double x, double y) { return {static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y))}; }

void box(cv::Mat& m, double x0, double y0, double x1, double y1, const Rgb& c) {
  cv::rectangle(m, pt(x0, y0), pt(x1, y1), c, cv::FILLED, cv::LINE_AA);
}

void ellipse(cv::Mat& m, double cx, double cy, double rx, double ry, const Rgb& c, double a0 = 0, double a1 = 360) {
  cv::ellipse(m, pt(cx, cy), cv::Size(std::max(1, static_cast<int>(std::lround(rx))), std::max(1, static_cast<int>(std::lround(ry)))),
              0, a0, a1, c, cv::FILLED, cv::LINE_AA);
}

// Draws the figure onto `m` (RGB float). Figure spans [top, bottom] rows.
void draw_figure(cv::Mat& m, const Look& look, double cx, double bottom, double fig_h) {
  const double top = bottom - fig_h;
  auto Y = [&](double frac) { return top + frac * fig_h; };
  const Rgb skin = skin_color(look.category("ethnicity"));

  double half = 0.105 * fig_h;  // torso half-width
  const std::string volume = look.category("body-volume");
  if (volume == "thin") half *= 0.78;
  if (volume == "fat") half *= 1.3;
  const bool female = look.category("gender") == "female";
  const double shoulder = half * (female ? 0.9 : 1.12);
  const double waist = half * (female ? 0.78 : 1.0);

  const std::string upper = look.category("upper-body-clothing");
  const std::string lower = look.category("lower-body-clothing");
  const Rgb up_c = cloth_color(upper), low_c = cloth_color(lower);
  const std::string up_t = cloth_type(upper), low_t = cloth_type(lower);
  const std::string accessory = look.category("accessories");

  // Backpack sits behind the torso and shows at the shoulders.
  if (accessory == "backpack") box(m, cx - shoulder - 0.05 * fig_h, Y(0.17), cx + shoulder + 0.05 * fig_h, Y(0.42), rgb(30, 110, 40));

  // Legs.
  const double leg_w = 0.62 * waist;
  const double leg_gap = 0.06 * fig_h;
  const double hip = Y(0.52), knee = Y(0.72), ankle = Y(0.93);
  for (int side : {-1, 1}) {
    const double lx0 = side < 0 ? cx - leg_gap / 2 - leg_w : cx + leg_gap / 2;
    const double lx1 = lx0 + leg_w;
    if (low_t == "shorts") {
      box(m, lx0, hip, lx1, knee, low_c);
      box(m, lx0 + 1, knee, lx1 - 1, ankle, skin);
    } else if (low_t == "skirt") {
      box(m, lx0 + 1, knee, lx1 - 1, ankle, skin);
    } else {
      box(m, lx0, hip, lx1, ankle, low_c);
      if (low_t == "jeans") {
        const Rgb seam = rgb(235, 190, 60);
        cv::line(m, pt(lx0 + leg_w * 0.5, hip), pt(lx0 + leg_w * 0.5, ankle), seam, 1, cv::LINE_AA);
      }
    }
  }
  if (low_t == "skirt") {
    std::vector<cv::Point> poly{pt(cx - waist, hip), pt(cx + waist, hip), pt(cx + waist * 1.5, knee + 2),
                                pt(cx - waist * 1.5, knee + 2)};
    cv::fillConvexPoly(m, poly, low_c, cv::LINE_AA);
  }

  // Feet.
  const std::string feet = look.category("feet");
  const Rgb shoe = shoe_color(feet, skin);
  const double foot_top = feet == "boots" ? Y(0.86) : Y(0.93);
  for (int side : {-1, 1}) {
    const double fx = cx + side * (leg_gap / 2 + leg_w / 2);
    box(m, fx - leg_w * 0.65, foot_top, fx + leg_w * 0.65, bottom, shoe);
    if (feet == "sandals") cv::line(m, pt(fx - leg_w * 0.6, Y(0.965)), pt(fx + leg_w * 0.6, Y(0.965)), rgb(90, 50, 20), 2);
  }

  // Torso and arms.
  const double torso_bottom = up_t == "coat" ? Y(0.64) : Y(0.53);
  std::vector<cv::Point> torso{pt(cx - shoulder, Y(0.16)), pt(cx + shoulder, Y(0.16)), pt(cx + waist, torso_bottom),
                               pt(cx - waist, torso_bottom)};
  cv::fillConvexPoly(m, torso, up_c, cv::LINE_AA);
  const double arm_w = 0.055 * fig_h;
  for (int side : {-1, 1}) {
    const double ax0 = side < 0 ? cx - shoulder - arm_w : cx + shoulder;
    if (up_t == "tshirt") {
      box(m, ax0, Y(0.16), ax0 + arm_w, Y(0.30), up_c);
      box(m, ax0 + 0.5, Y(0.30), ax0 + arm_w - 0.5, Y(0.50), skin);
    } else {
      box(m, ax0, Y(0.16), ax0 + arm_w, Y(0.47), up_c);
      box(m, ax0 + 0.5, Y(0.47), ax0 + arm_w - 0.5, Y(0.51), skin);
    }
  }
  if (up_t == "shirt") box(m, cx - 0.25 * half, Y(0.16), cx + 0.25 * half, Y(0.22), rgb(250, 250, 250));
  if (up_t == "jacket") box(m, cx - 0.12 * half, Y(0.17), cx + 0.12 * half, torso_bottom, rgb(240, 200, 40));
  if (up_t == "coat") {
    cv::line(m, pt(cx, Y(0.17)), pt(cx, torso_bottom), darker(up_c, 0.45), 2, cv::LINE_AA);
  }
  // Belt encodes age.
  box(m, cx - waist, Y(0.505), cx + waist, Y(0.545), belt_color(look.category("age")));

  // Head and neck.
  const double head_cy = Y(0.075), head_ry = 0.075 * fig_h, head_rx = 0.058 * fig_h;
  const std::string style = look.category("hairstyle");
  const Rgb hair = hair_color(look.category("hair-color"));
  if (style == "long") box(m, cx - head_rx * 1.15, head_cy, cx + head_rx * 1.15, Y(0.26), hair);
  if (style == "ponytail") box(m, cx + head_rx * 0.6, head_cy, cx + head_rx * 1.5, Y(0.24), hair);
  box(m, cx - head_rx * 0.35, head_cy + head_ry * 0.8, cx + head_rx * 0.35, Y(0.165), skin);
  ellipse(m, cx, head_cy, head_rx, head_ry, skin);
  if (style == "short") ellipse(m, cx, head_cy - head_ry * 0.25, head_rx * 1.02, head_ry * 0.8, hair, 180, 360);
  if (style == "medium" || style == "long" || style == "ponytail") {
    ellipse(m, cx, head_cy - head_ry * 0.2, head_rx * 1.1, head_ry * 0.95, hair, 180, 360);
    if (style == "medium") {
      box(m, cx - head_rx * 1.1, head_cy - head_ry * 0.2, cx - head_rx * 0.7, head_cy + head_ry * 0.9, hair);
      box(m, cx + head_rx * 0.7, head_cy - head_ry * 0.2, cx + head_rx * 1.1, head_cy + head_ry * 0.9, hair);
    }
  }
  if (style == "covered") ellipse(m, cx, head_cy, head_rx * 1.12, head_ry * 1.05, hair, 180, 360);

  // Facial hair and glasses.
  const Rgb facial = rgb(52, 34, 20);
  if (look.category("beard") == "yes") ellipse(m, cx, head_cy + head_ry * 0.55, head_rx * 0.85, head_ry * 0.45, facial, 0, 180);
  if (look.category("moustache") == "yes") box(m, cx - head_rx * 0.5, head_cy + head_ry * 0.25, cx + head_rx * 0.5, head_cy + head_ry * 0.42, facial);
  const std::string glasses = look.category("glasses");
  if (glasses == "normal") {
    box(m, cx - head_rx, head_cy - head_ry * 0.12, cx + head_rx, head_cy + head_ry * 0.02, rgb(110, 200, 235));
  } else if (glasses == "sun") {
    box(m, cx - head_rx, head_cy - head_ry * 0.2, cx + head_rx, head_cy + head_ry * 0.12, rgb(5, 5, 5));
  }

  // Head accessories.
  const std::string hat = look.category("head-accessories");
  if (hat == "cap") {
    ellipse(m, cx, head_cy - head_ry * 0.35, head_rx * 1.05, head_ry * 0.75, rgb(225, 25, 25), 180, 360);
    box(m, cx, head_cy - head_ry * 0.45, cx + head_rx * 1.7, head_cy - head_ry * 0.3, rgb(225, 25, 25));
  } else if (hat == "hat") {
    box(m, cx - head_rx * 1.8, head_cy - head_ry * 0.5, cx + head_rx * 1.8, head_cy - head_ry * 0.32, rgb(120, 80, 40));
    box(m, cx - head_rx * 0.9, head_cy - head_ry * 1.35, cx + head_rx * 0.9, head_cy - head_ry * 0.45, rgb(120, 80, 40));
  } else if (hat == "helmet") {
    ellipse(m, cx, head_cy - head_ry * 0.15, head_rx * 1.3, head_ry * 1.15, rgb(250, 140, 0), 180, 360);
  }

  // Carried accessories.
  const double hand_y = Y(0.5);
  const double left_hand = cx - shoulder - arm_w / 2, right_hand = cx + shoulder + arm_w / 2;
  if (accessory == "bag") {
    cv::line(m, pt(cx - shoulder, Y(0.17)), pt(cx + waist, Y(0.45)), rgb(120, 60, 20), 2, cv::LINE_AA);
    box(m, cx + waist * 0.6, Y(0.42), cx + waist * 1.5, Y(0.56), rgb(120, 60, 20));
  } else if (accessory == "handbag") {
    box(m, left_hand - 0.05 * fig_h, hand_y, left_hand + 0.03 * fig_h, hand_y + 0.09 * fig_h, rgb(240, 80, 160));
  } else if (accessory == "suitcase") {
    box(m, right_hand - 0.02 * fig_h, Y(0.58), right_hand + 0.11 * fig_h, Y(0.86), rgb(70, 70, 80));
    box(m, right_hand, hand_y, right_hand + 0.02 * fig_h, Y(0.58), rgb(70, 70, 80));
  } else if (accessory == "umbrella") {
    cv::line(m, pt(right_hand, hand_y), pt(right_hand, Y(-0.02)), rgb(30, 30, 30), 1, cv::LINE_AA);
    ellipse(m, right_hand, Y(0.0), 0.16 * fig_h, 0.07 * fig_h, rgb(120, 40, 200), 180, 360);
  } else if (accessory == "phone") {
    box(m, right_hand - 0.02 * fig_h, Y(0.36), right_hand + 0.025 * fig_h, Y(0.44), rgb(0, 0, 0));
  } else if (accessory == "bottle") {
    box(m, right_hand - 0.015 * fig_h, hand_y - 0.02 * fig_h, right_hand + 0.025 * fig_h, hand_y + 0.08 * fig_h,
        rgb(60, 220, 255));
  }
}

cv::Mat background(int h, int w, Rng& rng) {
  const double base = rng.uniform(0.35, 0.65);
  const cv::Scalar tint(base + rng.uniform(-0.06, 0.06), base + rng.uniform(-0.06, 0.06), base + rng.uniform(-0.06, 0.06));
  cv::Mat m(h, w, CV_32FC3, tint);
  const int blobs = 3 + rng.below(3);
  for (int i = 0; i < blobs; ++i) {
    const double g = rng.uniform(0.25, 0.75);
    const cv::Scalar c(g + rng.uniform(-0.08, 0.08), g + rng.uniform(-0.08, 0.08), g + rng.uniform(-0.08, 0.08));
    const double x = rng.uniform(0, w), y = rng.uniform(0, h);
    box(m, x, y, x + rng.uniform(4, w * 0.5), y + rng.uniform(4, h * 0.3), c);
  }
  return m;
}

void add_noise(cv::Mat& m, Rng& rng, double sigma) {
  auto* p = reinterpret_cast<float*>(m.data);
  const size_t n = m.total() * 3;
  for (size_t i = 0; i < n; ++i) p[i] = static_cast<float>(p[i] + sigma * rng.normal());
}

Image to_image(const cv::Mat& m) {
  cv::Mat c = m.clone();
  Image out{c.rows, c.cols, {}};
  out.pixels.assign(reinterpret_cast<const float*>(c.data),
                    reinterpret_cast<const float*>(c.data) + static_cast<size_t>(c.rows * c.cols * 3));
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace

Image render_person(const AttributeSchema& schema, const std::vector<int>& categories, CameraPlatform platform,
                    uint64_t nuisance_seed, int canvas_h, int canvas_w) {
  Rng rng(nuisance_seed);
  const Look look{schema, categories};
  cv::Mat canvas = background(canvas_h, canvas_w, rng);

  double height_frac = 0.86;
  const std::string height = look.category("height");
  if (height == "short") height_frac = 0.76;
  if (height == "tall") height_frac = 0.95;
  const double fig_h = canvas_h * height_frac * rng.uniform(0.95, 1.04);
  const double cx = canvas_w / 2.0 + rng.uniform(-3, 3);
  const double bottom = canvas_h - 3 + rng.uniform(-2, 1);
  draw_figure(canvas, look, cx, bottom, fig_h);
  if (rng.uniform() < 0.5) cv::flip(canvas, canvas, 1);

  const double gain = rng.uniform(0.85, 1.15);
  canvas *= gain;

  cv::Mat out;
  switch (platform) {
    case CameraPlatform::CCTV: {
      cv::GaussianBlur(canvas, out, cv::Size(0, 0), 0.5);
      break;
    }
    case CameraPlatform::Wearable: {
      // Closer, slightly rotated, warmer.
      const double angle = rng.uniform(-4, 4);
      cv::Mat rot = cv::getRotationMatrix2D(cv::Point2f(canvas_w / 2.0f, canvas_h / 2.0f), angle, 1.1);
      cv::warpAffine(canvas, out, rot, canvas.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT);
      std::vector<cv::Mat> ch;
      cv::split(out, ch);
      ch[0] *= 1.06;
      ch[2] *= 0.92;
      cv::merge(ch, out);
      break;
    }
    case CameraPlatform::Aerial: {
      // Seen from above: upper body stretched, legs foreshortened.
      const double gamma = rng.uniform(1.45, 1.75);
      const double shear = rng.uniform(-0.12, 0.12);
      cv::Mat map_x(canvas_h, canvas_w, CV_32FC1), map_y(canvas_h, canvas_w, CV_32FC1);
      for (int y = 0; y < canvas_h; ++y) {
        const double v = static_cast<double>(y) / (canvas_h - 1);
        const double src_y = std::pow(v, gamma) * (canvas_h - 1);
        for (int x = 0; x < canvas_w; ++x) {
          map_y.at<float>(y, x) = static_cast<float>(src_y);
          map_x.at<float>(y, x) = static_cast<float>(x + shear * (y - canvas_h / 2.0));
        }
      }
      cv::Mat warped;
      cv::remap(canvas, warped, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REFLECT);
      cv::Mat small;
      cv::resize(warped, small, cv::Size(canvas_w * 3 / 8, canvas_h * 3 / 8), 0, 0, cv::INTER_AREA);
      cv::GaussianBlur(small, out, cv::Size(0, 0), 0.7);
      // Haze.
      out = out * 0.85 + cv::Scalar(0.08, 0.08, 0.09);
      break;
    }
  }
  add_noise(out, rng, 0.02);
  return to_image(out);
}

std::vector<FixtureIdentity> plan_identities(const FixtureOptions& options, const AttributeSchema& schema) {
  if (options.n_ids < 2) throw ConfigError("fixture needs at least 2 identities");
  if (options.images_per_id_per_platform < 1) throw ConfigError("fixture needs at least 1 image per platform");
  Rng rng(options.seed ^ 0x5eedf00dULL);
  const int n_train = options.n_ids / 2;
  const size_t n_labels = schema.labels().size();
  std::set<std::vector<int>> used;
  std::vector<FixtureIdentity> out;
  for (int i = 0; i < options.n_ids; ++i) {
    FixtureIdentity id;
    id.person_id = i;
    id.train = i < n_train;
    const bool first_of_split = i == 0 || i == n_train;
    const bool can_twin = !first_of_split && out.back().twin_of < 0 && out.back().train == id.train;
    if (can_twin && rng.uniform() < 2.0 * options.twin_fraction) {
      const auto& base = out.back();
      for (int attempt = 0; attempt < 64 && id.categories.empty(); ++attempt) {
        const int label = rng.below(static_cast<int>(n_labels));
        const int size = schema.labels()[static_cast<size_t>(label)].size();
        auto cats = base.categories;
        cats[static_cast<size_t>(label)] = (cats[static_cast<size_t>(label)] + 1 + rng.below(size - 1)) % size;
        if (used.insert(cats).second) {
          id.categories = std::move(cats);
          id.twin_of = base.person_id;
          id.changed_label = label;
        }
      }
    }
    while (id.categories.empty()) {
      std::vector<int> cats(n_labels);
      for (size_t l = 0; l < n_labels; ++l) cats[l] = rng.below(schema.labels()[l].size());
      if (used.insert(cats).second) id.categories = std::move(cats);
    }
    out.push_back(std::move(id));
  }
  return out;
}

std::string FixtureManifest::serialize(const AttributeSchema& schema) const {
  std::ostringstream os;
  os << "# synthetic aerial-ground person fixture\n";
  os << "version=1\n";
  os << "schema=" << schema.mode() << "\n";
  os << "seed=" << seed << "\n";
  os << "ids=" << n_ids << "\n";
  os << "images_per_id_per_platform=" << images_per_id_per_platform << "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", twin_fraction);
  os << "twin_fraction=" << buf << "\n";
  for (const auto& id : identities) {
    os << "identity id=" << id.person_id << " split=" << (id.train ? "train" : "test") << " twin_of=" << id.twin_of
       << " changed=" << (id.changed_label < 0 ? std::string("-") : schema.labels()[static_cast<size_t>(id.changed_label)].name);
    for (size_t l = 0; l < schema.labels().size(); ++l) {
      const auto& label = schema.labels()[l];
      os << ' ' << label.name << '=' << label.categories[static_cast<size_t>(id.categories[l])];
    }
    os << "\n";
  }
  for (const auto& r : records) {
    os << "record file=" << r.file << " id=" << r.person_id << " platform=" << platform_code(r.platform)
       << " sequence=" << r.sequence << " split=" << (r.train ? "train" : "test") << "\n";
  }
  return os.str();
}

FixtureManifest FixtureManifest::parse(const std::string& text, const AttributeSchema& schema) {
  FixtureManifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "manifest:" + std::to_string(lineno);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    std::map<std::string, std::string> kv;
    const bool keyed = tokens[0] == "identity" || tokens[0] == "record";
    for (size_t i = keyed ? 1 : 0; i < tokens.size(); ++i) {
      const auto eq = tokens[i].find('=');
      if (eq == std::string::npos) throw ParseError(where, "expected key=value, got '" + tokens[i] + "'");
      kv[tokens[i].substr(0, eq)] = tokens[i].substr(eq + 1);
    }
    auto need = [&](const std::string& k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw ParseError(where, "missing key '" + k + "'");
      return it->second;
    };
    if (tokens[0] == "identity") {
      FixtureIdentity id;
      id.person_id = std::stoi(need("id"));
      id.train = need("split") == "train";
      id.twin_of = std::stoi(need("twin_of"));
      const std::string changed = need("changed");
      id.changed_label = changed == "-" ? -1 : schema.label_index(changed);
      for (const auto& label : schema.labels()) {
        const int idx = label.index_of(need(label.name));
        if (idx < 0) throw ParseError(where, "unknown category for " + label.name);
        id.categories.push_back(idx);
      }
      m.identities.push_back(std::move(id));
    } else if (tokens[0] == "record") {
      FixtureRecord r;
      r.file = need("file");
      r.person_id = std::stoi(need("id"));
      auto p = parse_platform(need("platform"));
      if (!p) throw ParseError(where, "bad platform");
      r.platform = *p;
      r.sequence = std::stoi(need("sequence"));
      r.train = need("split") == "train";
      m.records.push_back(std::move(r));
    } else {
      for (const auto& [k, v] : kv) {
        if (k == "seed") m.seed = std::stoull(v);
        else if (k == "ids") m.n_ids = std::stoi(v);
        else if (k == "images_per_id_per_platform") m.images_per_id_per_platform = std::stoi(v);
        else if (k == "twin_fraction") m.twin_fraction = std::stod(v);
      }
    }
  }
  return m;
}

FixtureManifest generate_fixture(const FixtureOptions& options, const std::string& out_dir) {
  const AttributeSchema& schema = AttributeSchema::builtin(DatasetMode::AgReidV2);
  FixtureManifest manifest;
  manifest.seed = options.seed;
  manifest.n_ids = options.n_ids;
  manifest.images_per_id_per_platform = options.images_per_id_per_platform;
  manifest.twin_fraction = options.twin_fraction;
  manifest.identities = plan_identities(options, schema);

  const fs::path root(out_dir);
  fs::create_directories(root / "train");
  fs::create_directories(root / "test");

  for (const auto& id : manifest.identities) {
    for (CameraPlatform p : kAllPlatforms) {
      for (int s = 0; s < options.images_per_id_per_platform; ++s) {
        const std::string rel = std::string(id.train ? "train/" : "test/") + record_stem(id.person_id, p, s) + ".png";
        const uint64_t nuisance = mix64(options.seed * 1000003ULL + static_cast<uint64_t>(id.person_id) * 7919ULL +
                                      static_cast<uint64_t>(p) * 131ULL + static_cast<uint64_t>(s));
        save_image((root / rel).string(),
                   render_person(schema, id.categories, p, nuisance, options.canvas_height, options.canvas_width));
        manifest.records.push_back(FixtureRecord{rel, id.person_id, p, s, id.train});
      }
    }
  }

  std::ofstream attrs(root / "attributes.csv");
  attrs << "person_id";
  for (const auto& label : schema.labels()) attrs << ',' << label.name;
  attrs << '\n';
  for (const auto& id : manifest.identities) {
    attrs << id.person_id;
    for (size_t l = 0; l < schema.labels().size(); ++l)
      attrs << ',' << schema.labels()[l].categories[static_cast<size_t>(id.categories[l])];
    attrs << '\n';
  }
  std::ofstream(root / "attribute.schema") << AttributeSchema::builtin_text(DatasetMode::AgReidV2);
  std::ofstream(root / "manifest.txt") << manifest.serialize(schema);
  if (!attrs) throw RuntimeFault("failed writing fixture under '" + out_dir + "'");
  return manifest;
}

}  // namespace v2e
