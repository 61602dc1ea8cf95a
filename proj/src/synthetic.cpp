#include "sevgrade/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <iomanip>
#include <sstream>

#include "sevgrade/error.hpp"
#include "text_util.hpp"

namespace sevgrade {
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3 - 2 * x);
}

/// Smooth value noise in [0, 1] on a lattice with the given cell size.
Image value_noise(Rng& rng, int side, double cell) {
  const int n = static_cast<int>(std::ceil(side / cell)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(n) * n);
  for (auto& v : lattice) v = uniform(rng, 0.0, 1.0);
  Image img(side, side);
  for (int r = 0; r < side; ++r) {
    const double y = r / cell;
    const int y0 = static_cast<int>(y);
    const double fy = smoothstep(y - y0);
    for (int c = 0; c < side; ++c) {
      const double x = c / cell;
      const int x0 = static_cast<int>(x);
      const double fx = smoothstep(x - x0);
      auto L = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * n + xx]; };
      const double top = L(y0, x0) * (1 - fx) + L(y0, x0 + 1) * fx;
      const double bot = L(y0 + 1, x0) * (1 - fx) + L(y0 + 1, x0 + 1) * fx;
      img.at(r, c) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return img;
}

struct Template {
  Image coarse;
  Image fine;
};

struct PatientParams {
  double dy = 0;
  double gap_scale = 1;
  double intensity = 1;
  Image perturb;
};

double joint_line(double u, double dy) {
  return 0.5 + dy + 0.03 * std::cos(2 * std::numbers::pi * 2 * u);
}

constexpr double kShaftHalfWidth = 0.38;

double checker(int r, int c, int period) { return ((r / period + c / period) % 2) ? 1.0 : 0.0; }

Image render_knee(const Template& tpl, const PatientParams& p, bool mirror, double gap_narrowing,
                  double roughness, Rng& rng) {
  const int side = tpl.coarse.height;
  Image img(side, side);
  std::normal_distribution<double> noise(0.0, 0.01);
  const double px = 1.0 / side;
  for (int r = 0; r < side; ++r) {
    const double v = (r + 0.5) * px;
    for (int c = 0; c < side; ++c) {
      double u = (c + 0.5) * px;
      if (mirror) u = 1.0 - u;
      const double j = joint_line(u, p.dy);
      const double half_gap = 0.045 * p.gap_scale * (1.0 - gap_narrowing);
      const double tex = 0.12 * (tpl.coarse.at(r, c) - 0.5) + 0.06 * (tpl.fine.at(r, c) - 0.5) +
                         0.03 * (p.perturb.at(r, c) - 0.5);
      // soft membership of bone shaft, femur and tibia
      const double shaft = smoothstep((kShaftHalfWidth - std::abs(u - 0.5)) / (1.5 * px) + 0.5);
      const double femur = smoothstep(((j - half_gap) - v) / (1.5 * px) + 0.5);
      const double tibia = smoothstep((v - (j + half_gap)) / (1.5 * px) + 0.5);
      const double bone_value = femur * 0.62 + tibia * 0.58 + (1 - femur - tibia) * 0.18;
      // cystic mottling in the subchondral bone, clear of the gap itself
      const double dist = std::abs(v - j) - half_gap;
      const double band = smoothstep(dist / 0.03) * smoothstep(1.0 - dist / 0.2);
      const double rough = -roughness * band * checker(r, c, std::max(2, side / 8));
      const double value = shaft * (bone_value + tex + rough) + (1 - shaft) * (0.25 + 0.35 * tex);
      img.at(r, c) = static_cast<float>(value * p.intensity + noise(rng));
    }
  }
  return img;
}

void paint_disc(Image& img, double cr, double cc, double radius, double base, double amp,
                int period) {
  const int side = img.height;
  for (int r = std::max(0, static_cast<int>(cr - radius) - 1);
       r <= std::min(side - 1, static_cast<int>(cr + radius) + 1); ++r) {
    for (int c = std::max(0, static_cast<int>(cc - radius) - 1);
         c <= std::min(side - 1, static_cast<int>(cc + radius) + 1); ++c) {
      const double d = std::hypot(r - cr, c - cc);
      if (d > radius) continue;
      const double w = smoothstep((radius - d) / 1.5);
      const double v = base + amp * (checker(r, c, period) - 0.5);
      img.at(r, c) = static_cast<float>((1 - w) * img.at(r, c) + w * v);
    }
  }
}

/// Adds `grade` corruptions of increasing extent near the joint.
void corrupt(Image& img, int grade, double dy, bool mirror, Rng& rng) {
  const int side = img.height;
  const double radius = side * (0.1 + 0.03 * grade);
  const int period = std::max(2, side / 32);
  const int first_kind = uniform_int(rng, 0, 3);
  for (int i = 0; i < grade; ++i) {
    const int kind = (first_kind + i) % 4;
    double u = uniform(rng, 0.2, 0.8);
    double v = joint_line(u, dy);
    switch (kind) {
      case 0:
      case 2: {  // osteophyte spur growing out of the joint margin
        const bool medial = (kind == 0) == (uniform(rng, 0.0, 1.0) < 0.5);
        const double edge = medial ? 0.5 - kShaftHalfWidth : 0.5 + kShaftHalfWidth;
        u = edge + (medial ? -1 : 1) * 0.5 * radius / side;
        v = joint_line(edge, dy) + uniform(rng, -0.03, 0.03);
        paint_disc(img, v * side, (mirror ? 1 - u : u) * side, radius, 0.9, 0.3, period);
        break;
      }
      default:  // subchondral cyst
        v += (uniform(rng, 0.0, 1.0) < 0.5 ? -1 : 1) * (0.06 + radius / side);
        paint_disc(img, v * side, (mirror ? 1 - u : u) * side, radius * 0.8, 0.08, 0.1, period);
        break;
    }
  }
}

void add_implant(Image& img, double dy, Rng& rng) {
  const int side = img.height;
  const double u = uniform(rng, 0.35, 0.65);
  const double top = joint_line(u, dy) + 0.1;
  const int r0 = static_cast<int>(top * side);
  const int r1 = std::min(side, static_cast<int>((top + 0.3) * side));
  const int half_w = std::max(1, static_cast<int>(0.03 * side));
  const int cc = static_cast<int>(u * side);
  for (int r = r0; r < r1; ++r) {
    for (int c = std::max(0, cc - half_w); c <= std::min(side - 1, cc + half_w); ++c) {
      img.at(r, c) = (r % 3 == 0) ? 0.7f : 0.99f;
    }
  }
}

struct SecondaryGrades {
  std::optional<int> jsn_med, jsn_lat;
  std::array<std::optional<int>, 4> ost{};
};

SecondaryGrades secondary_grades(int grade, Rng& rng) {
  SecondaryGrades g;
  auto set_ost = [&](std::array<int, 4> v) {
    std::shuffle(v.begin(), v.end(), rng);
    for (int k = 0; k < 4; ++k) g.ost[k] = v[k];
  };
  switch (grade) {
    case 0:
      g.jsn_med = 0;
      g.jsn_lat = 0;
      if (uniform(rng, 0, 1) >= 0.3) set_ost({0, 0, 0, 0});
      break;
    case 1:
      g.jsn_med = uniform(rng, 0, 1) < 0.3 ? 1 : 0;
      g.jsn_lat = 0;
      if (*g.jsn_med == 0 && uniform(rng, 0, 1) < 0.2) break;  // osteophytes unread
      set_ost({uniform(rng, 0, 1) < 0.5 ? 1 : 0, 0, 0, 0});
      break;
    case 2:
      g.jsn_med = 1;
      g.jsn_lat = uniform(rng, 0, 1) < 0.3 ? 1 : 0;
      set_ost({1, uniform(rng, 0, 1) < 0.5 ? 1 : 0, 0, 0});
      break;
    case 3:
      g.jsn_med = 2;
      g.jsn_lat = 1;
      set_ost({2, 2, 1, 0});
      break;
    default:
      g.jsn_med = 3;
      g.jsn_lat = 2;
      set_ost({3, 2, 2, 1});
      break;
  }
  return g;
}

}  // namespace

SyntheticCorpus generate_synthetic_images(const SyntheticSpec& spec) {
  if (spec.n_per_grade < 1) throw Error(ErrorKind::config, "n_per_grade must be >= 1");
  if (spec.image_side < kMinSyntheticSide) {
    throw Error(ErrorKind::config, "image_side " + std::to_string(spec.image_side) +
                                       " is below the minimum of " + std::to_string(kMinSyntheticSide));
  }
  for (int g : spec.grades) {
    if (g < 0 || g > 4) throw Error(ErrorKind::config, "grades must lie in 0..4");
  }
  Rng rng(spec.rng_seed);
  const int side = spec.image_side;
  Template tpl{value_noise(rng, side, side / 8.0), value_noise(rng, side, side / 21.0)};

  SyntheticCorpus corpus;
  corpus.manifest.image_side = side;
  corpus.manifest.source = "synthetic";
  int patient_counter = 0;
  const double frac_total = spec.split_fractions[0] + spec.split_fractions[1] + spec.split_fractions[2];
  for (int grade : spec.grades) {
    const int n_patients = (spec.n_per_grade + 1) / 2;
    std::vector<int> order(static_cast<std::size_t>(n_patients));
    for (int i = 0; i < n_patients; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const int n_train = static_cast<int>(std::lround(n_patients * spec.split_fractions[0] / frac_total));
    const int n_val = static_cast<int>(std::lround(n_patients * spec.split_fractions[1] / frac_total));
    std::vector<Split> patient_split(static_cast<std::size_t>(n_patients));
    for (int i = 0; i < n_patients; ++i) {
      const int rank = order[static_cast<std::size_t>(i)];
      patient_split[static_cast<std::size_t>(i)] =
          rank < n_train ? Split::train : (rank < n_train + n_val ? Split::val : Split::test);
    }
    for (int p = 0; p < n_patients; ++p) {
      ++patient_counter;
      std::ostringstream pid;
      pid << 'P' << std::setw(4) << std::setfill('0') << patient_counter;
      PatientParams params;
      params.dy = uniform(rng, -0.03, 0.03);
      params.gap_scale = uniform(rng, 0.9, 1.1);
      params.intensity = uniform(rng, 0.95, 1.05);
      params.perturb = value_noise(rng, side, side / 6.0);
      for (int knee = 0; knee < 2 && 2 * p + knee < spec.n_per_grade; ++knee) {
        const bool mirror = knee == 0;
        Image img = render_knee(tpl, params, mirror, 0.02 * grade, 0.3 * grade, rng);
        corrupt(img, grade, params.dy, mirror, rng);
        const bool implant = uniform(rng, 0, 1) < spec.implant_fraction;
        if (implant) add_implant(img, params.dy, rng);
        for (auto& v : img.pixels) v = to_byte(v) / 255.0f;

        Sample s;
        s.image_ref = "images/g" + std::to_string(grade) + "_" + pid.str() + (mirror ? "_L" : "_R") + ".pgm";
        s.patient_id = pid.str();
        s.knee_side = mirror ? KneeSide::left : KneeSide::right;
        s.split = patient_split[static_cast<std::size_t>(p)];
        s.kl_grade = grade;
        auto sec = secondary_grades(grade, rng);
        s.jsn_medial = sec.jsn_med;
        s.jsn_lateral = sec.jsn_lat;
        s.osteophytes = sec.ost;
        const double sim = implant ? 0.30 + 0.01 * std::normal_distribution<double>()(rng)
                                   : 0.22 + 0.01 * std::normal_distribution<double>()(rng);
        corpus.artifact_similarity[s.image_ref] = sim;
        corpus.manifest.samples.push_back(std::move(s));
        corpus.images.push_back(std::move(img));
        corpus.has_implant.push_back(implant);
      }
    }
  }
  validate_manifest(corpus.manifest);
  return corpus;
}

Manifest generate_synthetic_corpus(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  auto corpus = generate_synthetic_images(spec);
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    write_pgm(dir / corpus.manifest.samples[i].image_ref, corpus.images[i]);
  }
  corpus.manifest.root = dir;
  save_manifest(dir / "manifest.csv", corpus.manifest);
  std::ostringstream sim;
  sim << "sample_id,similarity\n";
  for (const auto& s : corpus.manifest.samples) {
    sim << s.image_ref << ',' << detail::format_double(corpus.artifact_similarity.at(s.image_ref)) << '\n';
  }
  detail::write_text_atomic(dir / "artifact_similarity.csv", sim.str());
  return corpus.manifest;
}

}  // namespace sevgrade
