#include "drag/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "drag/rng.hpp"

namespace drag {

namespace {

constexpr double kBackground = 0.25;
constexpr double kOneOfPairFraction = 0.4;  // share of label-0 images with one rule pattern

struct Tint {
  double r, g, b;
};

Tint tint_of(PatternKind kind) {
  switch (kind) {
    case PatternKind::square: return {1.0, 0.55, 0.55};
    case PatternKind::cross: return {0.55, 1.0, 0.55};
    case PatternKind::stripes: return {0.55, 0.55, 1.0};
    case PatternKind::disk: return {1.0, 1.0, 0.55};
    case PatternKind::checker: return {1.0, 0.55, 1.0};
  }
  throw ContractError("unknown pattern kind");
}

// Filled cells of the pattern within its size x size bounding box.
std::vector<std::uint8_t> stencil(PatternKind kind, std::size_t size) {
  std::vector<std::uint8_t> mask(size * size, 0);
  switch (kind) {
    case PatternKind::square:
      std::fill(mask.begin(), mask.end(), 1);
      break;
    case PatternKind::cross: {
      const std::size_t bar = std::max<std::size_t>(1, size / 4);
      const std::size_t lo = (size - bar) / 2;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          if ((x >= lo && x < lo + bar) || (y >= lo && y < lo + bar)) mask[y * size + x] = 1;
        }
      break;
    }
    case PatternKind::stripes:
      for (std::size_t y = 0; y < size; y += 2)
        for (std::size_t x = 0; x < size; ++x) mask[y * size + x] = 1;
      break;
    case PatternKind::disk: {
      const double c = (static_cast<double>(size) - 1.0) / 2.0;
      const double r = static_cast<double>(size) / 2.0 - 0.25;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) - c;
          const double dy = static_cast<double>(y) - c;
          if (dx * dx + dy * dy <= r * r) mask[y * size + x] = 1;
        }
      break;
    }
    case PatternKind::checker: {
      const std::size_t cell = std::max<std::size_t>(1, size / 3);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          if (((x / cell) + (y / cell)) % 2 == 0) mask[y * size + x] = 1;
        }
      break;
    }
  }
  return mask;
}

struct Placement {
  PatternSpec spec;
  std::size_t x0 = 0, y0 = 0;  // top-left corner
};

bool boxes_overlap(const Placement& a, const Placement& b) {
  // 1px gap between bounding boxes
  const auto ax1 = a.x0 + a.spec.size + 1;
  const auto ay1 = a.y0 + a.spec.size + 1;
  const auto bx1 = b.x0 + b.spec.size + 1;
  const auto by1 = b.y0 + b.spec.size + 1;
  return a.x0 < bx1 && b.x0 < ax1 && a.y0 < by1 && b.y0 < ay1;
}

PatternSpec random_distractor(Rng& rng) {
  static const PatternKind pool[] = {PatternKind::stripes, PatternKind::disk,
                                     PatternKind::checker};
  PatternSpec spec;
  spec.kind = pool[rng.index(3)];
  spec.size = 5 + rng.index(4);  // 5..8
  spec.intensity = rng.uniform(0.6, 0.95);
  return spec;
}

// Renders one sample into a 3*S*S buffer; returns the 8-bit quantized reals.
std::vector<double> render_sample(const DatasetConfig& cfg, const std::vector<PatternSpec>& specs,
                                  Rng& rng) {
  const std::size_t s = cfg.image_side;
  std::vector<double> img(3 * s * s);
  for (auto& v : img) v = kBackground + rng.normal(0.0, cfg.noise_std);

  std::vector<Placement> placed;
  for (const auto& spec : specs) {
    if (spec.size > s / 2) {
      throw GenerationError("pattern size " + std::to_string(spec.size) +
                            " exceeds half the image side");
    }
    Placement p{spec, 0, 0};
    bool ok = false;
    for (int attempt = 0; attempt < 100; ++attempt) {
      p.x0 = rng.index(s - spec.size + 1);
      p.y0 = rng.index(s - spec.size + 1);
      ok = std::none_of(placed.begin(), placed.end(),
                        [&](const Placement& q) { return boxes_overlap(p, q); });
      if (ok) break;
    }
    if (!ok) {
      throw GenerationError("could not place a " + to_string(spec.kind) +
                            " pattern after 100 attempts");
    }
    placed.push_back(p);
    const auto mask = stencil(spec.kind, spec.size);
    const Tint tint = tint_of(spec.kind);
    const double ch[3] = {spec.intensity * tint.r, spec.intensity * tint.g,
                          spec.intensity * tint.b};
    for (std::size_t y = 0; y < spec.size; ++y)
      for (std::size_t x = 0; x < spec.size; ++x) {
        if (!mask[y * spec.size + x]) continue;
        const std::size_t px = (p.x0 + y) * s + (p.y0 + x);
        for (std::size_t c = 0; c < 3; ++c) img[c * s * s + px] = ch[c];
      }
  }

  for (auto& v : img) {
    v = std::clamp(v, 0.0, 1.0);
    v = std::round(v * 255.0) / 255.0;  // match the on-disk 8-bit quantization
  }
  return img;
}

struct SplitPlan {
  Split split;
  std::size_t count;
  std::uint64_t stream;
};

void write_ppm(const std::filesystem::path& path, const std::vector<double>& img,
               std::size_t side) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("generate_dataset: cannot open " + path.string());
  out << "P6\n" << side << " " << side << "\n255\n";
  const std::size_t plane = side * side;
  std::vector<char> row(3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      row[p * 3 + c] = static_cast<char>(
          static_cast<int>(std::lround(img[c * plane + p] * 255.0)));
    }
  }
  out.write(row.data(), static_cast<std::streamsize>(row.size()));
}

std::string pattern_str(const PatternSpec& p) {
  std::ostringstream os;
  os << to_string(p.kind) << ":" << p.size << ":" << p.intensity;
  return os.str();
}

}  // namespace

PatternKind pattern_kind_from_string(const std::string& name) {
  if (name == "square") return PatternKind::square;
  if (name == "cross") return PatternKind::cross;
  if (name == "stripes") return PatternKind::stripes;
  if (name == "disk") return PatternKind::disk;
  if (name == "checker") return PatternKind::checker;
  throw FormatError("unknown pattern kind '" + name + "'");
}

std::string to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::square: return "square";
    case PatternKind::cross: return "cross";
    case PatternKind::stripes: return "stripes";
    case PatternKind::disk: return "disk";
    case PatternKind::checker: return "checker";
  }
  throw ContractError("unknown pattern kind value");
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw FormatError("unknown split '" + name + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw ContractError("unknown split value");
}

std::vector<std::size_t> Dataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

Tensor Dataset::gather_images(const std::vector<std::size_t>& indices) const {
  const std::size_t sample = 3 * image_side * image_side;
  std::vector<double> out(indices.size() * sample);
  const double* src = images.values().data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy(src + indices[i] * sample, src + (indices[i] + 1) * sample,
              out.begin() + i * sample);
  }
  return Tensor::from({indices.size(), 3, image_side, image_side}, std::move(out));
}

std::vector<int> Dataset::gather_labels(const std::vector<std::size_t>& indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

Dataset generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir) {
  if (cfg.rule_a.kind == cfg.rule_b.kind) {
    throw ContractError("generate_dataset: the two rule patterns must have distinct kinds");
  }
  if (cfg.class_ratio <= 0.0) throw ContractError("generate_dataset: class_ratio must be > 0");
  std::filesystem::create_directories(dir);

  const Rng root(cfg.seed);
  const SplitPlan plans[3] = {{Split::train, cfg.n_train, 1},
                              {Split::val, cfg.n_val, 2},
                              {Split::test, cfg.n_test, 3}};
  const std::size_t total = cfg.n_train + cfg.n_val + cfg.n_test;
  const std::size_t plane = cfg.image_side * cfg.image_side;

  Dataset data;
  data.image_side = cfg.image_side;
  data.labels.reserve(total);
  data.splits.reserve(total);
  std::vector<double> all_images(total * 3 * plane);

  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) {
    throw FormatError("generate_dataset: cannot open " + (dir / "manifest.csv").string());
  }
  manifest << "index,filename,label,split\n";

  double class_sum[2] = {0.0, 0.0};
  std::size_t class_count[2] = {0, 0};
  std::size_t index = 0;

  for (const auto& plan : plans) {
    Rng split_rng = root.child(plan.stream);

    // Exact class counts, then exact one-of-pair counts within label 0.
    const std::size_t n_private =
        static_cast<std::size_t>(std::lround(static_cast<double>(plan.count) /
                                             (1.0 + cfg.class_ratio)));
    std::vector<int> label_order(plan.count, 0);
    std::fill(label_order.begin(), label_order.begin() + static_cast<long>(n_private), 1);
    split_rng.shuffle(label_order);

    const std::size_t n_public = plan.count - n_private;
    const std::size_t n_one_of_pair = static_cast<std::size_t>(
        std::ceil(kOneOfPairFraction * static_cast<double>(n_public)));
    std::vector<int> one_of_pair(n_public, 0);
    std::fill(one_of_pair.begin(),
              one_of_pair.begin() + static_cast<long>(std::min(n_one_of_pair, n_public)), 1);
    split_rng.shuffle(one_of_pair);

    std::size_t public_seen = 0;
    for (std::size_t i = 0; i < plan.count; ++i, ++index) {
      Rng rng = split_rng.child(1000 + i);
      const int label = label_order[i];
      const std::size_t n_patterns = 2 + rng.index(3);  // 2..4

      std::vector<PatternSpec> specs;
      if (label == 1) {
        specs.push_back(cfg.rule_a);
        specs.push_back(cfg.rule_b);
      } else {
        if (one_of_pair[public_seen++]) {
          specs.push_back(rng.index(2) == 0 ? cfg.rule_a : cfg.rule_b);
        }
      }
      while (specs.size() < n_patterns) specs.push_back(random_distractor(rng));

      const auto img = render_sample(cfg, specs, rng);
      std::copy(img.begin(), img.end(), all_images.begin() + index * 3 * plane);

      double m = 0.0;
      for (double v : img) m += v;
      class_sum[label] += m / static_cast<double>(img.size());
      class_count[label]++;

      char name[32];
      std::snprintf(name, sizeof(name), "img_%05zu.ppm", index);
      write_ppm(dir / name, img, cfg.image_side);
      manifest << index << "," << name << "," << label << "," << to_string(plan.split) << "\n";
      data.labels.push_back(label);
      data.splits.push_back(plan.split);
    }
  }
  manifest.close();

  // A label-blind shortcut (mean intensity) must not separate the classes.
  const double m0 = class_sum[0] / static_cast<double>(class_count[0]);
  const double m1 = class_sum[1] / static_cast<double>(class_count[1]);
  if (std::fabs(m0 - m1) > 0.03 * (0.5 * (m0 + m1))) {
    throw GenerationError("class-conditional mean intensities differ by more than 3%: " +
                          std::to_string(m0) + " vs " + std::to_string(m1));
  }

  std::ofstream gencfg(dir / "genconfig.txt");
  if (!gencfg) {
    throw FormatError("generate_dataset: cannot open " + (dir / "genconfig.txt").string());
  }
  gencfg << "image_side=" << cfg.image_side << "\n"
         << "n_train=" << cfg.n_train << "\n"
         << "n_val=" << cfg.n_val << "\n"
         << "n_test=" << cfg.n_test << "\n"
         << "rule_a=" << pattern_str(cfg.rule_a) << "\n"
         << "rule_b=" << pattern_str(cfg.rule_b) << "\n"
         << "class_ratio=" << cfg.class_ratio << "\n"
         << "noise_std=" << cfg.noise_std << "\n"
         << "seed=" << cfg.seed << "\n";

  data.images = Tensor::from({total, 3, cfg.image_side, cfg.image_side}, std::move(all_images));
  return data;
}

namespace {

std::vector<double> read_ppm(const std::filesystem::path& path, std::size_t expect_side) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_dataset: missing image file " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError("load_dataset: " + path.string() + " is not a P6 pixmap");
  std::size_t w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || maxval != 255) {
    throw FormatError("load_dataset: bad header in " + path.string());
  }
  if (w != expect_side || h != expect_side) {
    throw FormatError("load_dataset: " + path.string() + " has size " + std::to_string(w) + "x" +
                      std::to_string(h) + ", expected " + std::to_string(expect_side) + "x" +
                      std::to_string(expect_side));
  }
  in.get();  // single whitespace after maxval
  std::vector<char> bytes(3 * w * h);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("load_dataset: truncated image file " + path.string());
  }
  std::vector<double> img(3 * w * h);
  const std::size_t plane = w * h;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      img[c * plane + p] = static_cast<double>(static_cast<unsigned char>(bytes[p * 3 + c])) / 255.0;
    }
  }
  return img;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) {
    throw FormatError("load_dataset: missing manifest " + manifest_path.string());
  }
  std::string line;
  if (!std::getline(manifest, line) || line != "index,filename,label,split") {
    throw FormatError("load_dataset: bad header in " + manifest_path.string() + " line 1");
  }

  struct Row {
    std::string filename;
    int label;
    Split split;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string idx_s, file_s, label_s, split_s;
    if (!std::getline(ss, idx_s, ',') || !std::getline(ss, file_s, ',') ||
        !std::getline(ss, label_s, ',') || !std::getline(ss, split_s)) {
      throw FormatError("load_dataset: malformed row in " + manifest_path.string() + " line " +
                        std::to_string(line_no));
    }
    if (label_s != "0" && label_s != "1") {
      throw FormatError("load_dataset: label '" + label_s + "' outside {0,1} in " +
                        manifest_path.string() + " line " + std::to_string(line_no));
    }
    rows.push_back({file_s, label_s == "1" ? 1 : 0, split_from_string(split_s)});
  }
  if (rows.empty()) {
    throw FormatError("load_dataset: no samples listed in " + manifest_path.string());
  }

  // Infer the side from the first image, then require consistency.
  std::size_t side = 0;
  {
    std::ifstream probe(dir / rows[0].filename, std::ios::binary);
    if (!probe) {
      throw FormatError("load_dataset: missing image file " + (dir / rows[0].filename).string());
    }
    std::string magic;
    std::size_t w = 0, h = 0;
    probe >> magic >> w >> h;
    if (magic != "P6" || w == 0 || w != h) {
      throw FormatError("load_dataset: bad first image " + (dir / rows[0].filename).string());
    }
    side = w;
  }

  Dataset data;
  data.image_side = side;
  const std::size_t sample = 3 * side * side;
  std::vector<double> all(rows.size() * sample);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto img = read_ppm(dir / rows[i].filename, side);
    std::copy(img.begin(), img.end(), all.begin() + i * sample);
    data.labels.push_back(rows[i].label);
    data.splits.push_back(rows[i].split);
  }
  data.images = Tensor::from({rows.size(), 3, side, side}, std::move(all));
  return data;
}

}  // namespace drag
