#include "drag/region_discovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "drag/backbone.hpp"

namespace drag {

namespace {

void check_fw(const Tensor& fw, const char* who) {
  if (fw.rank() != 4) {
    throw DimensionError(std::string(who) + ": expected [B,N,H,W], got " + shape_str(fw.shape()));
  }
}

}  // namespace

std::vector<PeakCoord> peak_coordinates(const Tensor& fb_single) {
  if (fb_single.rank() != 3) {
    throw DimensionError("peak_coordinates: expected [C,H,W], got " + shape_str(fb_single.shape()));
  }
  const std::size_t c = fb_single.extent(0);
  const std::size_t h = fb_single.extent(1);
  const std::size_t w = fb_single.extent(2);
  const double* v = fb_single.values().data();
  std::vector<PeakCoord> peaks(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* map = v + ch * h * w;
    std::size_t best = 0;
    for (std::size_t i = 1; i < h * w; ++i) {
      if (map[i] > map[best]) best = i;
    }
    peaks[ch] = {best / w, best % w};
  }
  return peaks;
}

void SignatureBuilder::add(const Tensor& fb) {
  if (fb.rank() == 4) {
    const std::size_t b = fb.extent(0);
    const std::size_t chw = fb.extent(1) * fb.extent(2) * fb.extent(3);
    for (std::size_t i = 0; i < b; ++i) {
      const auto* base = fb.values().data() + i * chw;
      add(Tensor::from({fb.extent(1), fb.extent(2), fb.extent(3)},
                       std::vector<double>(base, base + chw)));
    }
    return;
  }
  if (fb.rank() != 3) {
    throw DimensionError("SignatureBuilder: expected [C,H,W] or [B,C,H,W], got " +
                         shape_str(fb.shape()));
  }
  const std::size_t c = fb.extent(0);
  const std::size_t h = fb.extent(1);
  const std::size_t w = fb.extent(2);
  if (acc_.count == 0 && acc_.channels == 0) {
    acc_.channels = c;
    acc_.height = h;
    acc_.width = w;
    acc_.rows.assign(c, {});
  } else if (c != acc_.channels || h != acc_.height || w != acc_.width) {
    throw DimensionError("SignatureBuilder: shape " + shape_str(fb.shape()) +
                         " differs from earlier images");
  }
  const auto peaks = peak_coordinates(fb);
  for (std::size_t ch = 0; ch < c; ++ch) {
    acc_.rows[ch].push_back(static_cast<double>(peaks[ch].x));
    acc_.rows[ch].push_back(static_cast<double>(peaks[ch].y));
  }
  acc_.count++;
}

ChannelSignatures SignatureBuilder::finish() const { return acc_; }

ChannelSignatures build_channel_signatures(const std::vector<Tensor>& fbs) {
  SignatureBuilder builder;
  for (const auto& fb : fbs) builder.add(fb);
  return builder.finish();
}

Tensor ClusterAssignment::matrix() const {
  std::vector<double> m(n_regions * n_channels, 0.0);
  for (std::size_t c = 0; c < n_channels; ++c) {
    m[channel_to_region[c] * n_channels + c] = 1.0;
  }
  return Tensor::from({n_regions, n_channels}, std::move(m));
}

ClusterAssignment cluster_channels(const ChannelSignatures& signatures, std::size_t n_regions,
                                   std::uint64_t seed) {
  auto km = kmeans_cluster(signatures.rows, n_regions, seed);
  ClusterAssignment out;
  out.n_regions = n_regions;
  out.n_channels = signatures.channels;
  out.channel_to_region = std::move(km.assignment);
  return out;
}

CglParams CglParams::init(std::size_t channels, std::size_t n_regions, std::size_t hidden,
                          Rng& rng) {
  CglParams p;
  p.n_regions = n_regions;
  p.n_channels = channels;
  p.hidden = hidden;
  p.w1 = Tensor::param({channels, hidden}, he_normal(channels * hidden, channels, rng));
  p.b1 = Tensor::param({hidden}, std::vector<double>(hidden, 0.0));
  const std::size_t out = n_regions * channels;
  p.w2 = Tensor::param({hidden, out}, he_normal(hidden * out, hidden, rng));
  p.b2 = Tensor::param({out}, std::vector<double>(out, 0.0));
  return p;
}

std::vector<Tensor> CglParams::parameters() const { return {w1, b1, w2, b2}; }

Tensor cgl_forward(const Tensor& fb, const CglParams& params) {
  if (fb.rank() != 4 || fb.extent(1) != params.n_channels) {
    throw DimensionError("cgl_forward: expected [B," + std::to_string(params.n_channels) +
                         ",H,W], got " + shape_str(fb.shape()));
  }
  const std::size_t b = fb.extent(0);
  const std::size_t c = fb.extent(1);
  const std::size_t hw = fb.extent(2) * fb.extent(3);
  Tensor descriptor = max_with_argmax(reshape(fb, {b, c, hw}), 2).values;  // [B,C]
  Tensor hiddenv = relu(add_rowvec(matmul(descriptor, params.w1), params.b1));
  Tensor logits = add_rowvec(matmul(hiddenv, params.w2), params.b2);
  return reshape(sigmoid(logits), {b, params.n_regions, params.n_channels});
}

Tensor region_features(const Tensor& fb, const Tensor& cr_soft) {
  if (fb.rank() != 4 || cr_soft.rank() != 3) {
    throw DimensionError("region_features: expected fb [B,C,H,W] and cr [B,N,C], got " +
                         shape_str(fb.shape()) + " and " + shape_str(cr_soft.shape()));
  }
  const std::size_t b = fb.extent(0);
  const std::size_t c = fb.extent(1);
  const std::size_t h = fb.extent(2);
  const std::size_t w = fb.extent(3);
  if (cr_soft.extent(0) != b || cr_soft.extent(2) != c) {
    throw DimensionError("region_features: fb " + shape_str(fb.shape()) + " and cr " +
                         shape_str(cr_soft.shape()) + " disagree on batch or channels");
  }
  const std::size_t n = cr_soft.extent(1);
  Tensor mixed = matmul(cr_soft, reshape(fb, {b, c, h * w}));  // [B,N,HW]
  return reshape(scale(mixed, 1.0 / static_cast<double>(c)), {b, n, h, w});
}

RegionPeaks region_peaks(const Tensor& fw) {
  check_fw(fw, "region_peaks");
  const std::size_t b = fw.extent(0);
  const std::size_t n = fw.extent(1);
  const std::size_t h = fw.extent(2);
  const std::size_t w = fw.extent(3);
  const double* v = fw.values().data();
  RegionPeaks out;
  out.batch = b;
  out.regions = n;
  out.peaks.resize(b * n);
  for (std::size_t bi = 0; bi < b * n; ++bi) {
    const double* map = v + bi * h * w;
    std::size_t best = 0;
    for (std::size_t i = 1; i < h * w; ++i) {
      if (map[i] > map[best]) best = i;
    }
    out.peaks[bi] = {best / w, best % w};
  }
  return out;
}

Tensor dis_loss(const Tensor& fw) { return dis_loss(fw, region_peaks(fw)); }

Tensor dis_loss(const Tensor& fw, const RegionPeaks& peaks) {
  check_fw(fw, "dis_loss");
  const std::size_t b = fw.extent(0);
  const std::size_t n = fw.extent(1);
  const std::size_t h = fw.extent(2);
  const std::size_t w = fw.extent(3);
  if (peaks.batch != b || peaks.regions != n) {
    throw DimensionError("dis_loss: peak table does not match " + shape_str(fw.shape()));
  }
  // Squared distance to the (detached) region peak, as a constant weight map.
  std::vector<double> weights(b * n * h * w);
  for (std::size_t bi = 0; bi < b * n; ++bi) {
    const auto peak = peaks.peaks[bi];
    double* dst = weights.data() + bi * h * w;
    for (std::size_t x = 0; x < h; ++x) {
      for (std::size_t y = 0; y < w; ++y) {
        const double dx = static_cast<double>(x) - static_cast<double>(peak.x);
        const double dy = static_cast<double>(y) - static_cast<double>(peak.y);
        dst[x * w + y] = dx * dx + dy * dy;
      }
    }
  }
  Tensor weight = Tensor::from({b, n, h, w}, std::move(weights));
  return scale(sum_all(mul(square(fw), weight)), 1.0 / static_cast<double>(b));
}

DivBranches div_branches(const Tensor& fw) {
  check_fw(fw, "div_branches");
  const std::size_t b = fw.extent(0);
  const std::size_t n = fw.extent(1);
  const std::size_t h = fw.extent(2);
  const std::size_t w = fw.extent(3);
  DivBranches out;
  out.batch = b;
  out.regions = n;
  out.height = h;
  out.width = w;
  if (n < 2) return out;
  out.argmax.resize(b * n * h * w);
  const double* v = fw.values().data();
  const std::size_t hw = h * w;
  for (std::size_t bb = 0; bb < b; ++bb) {
    const double* img = v + bb * n * hw;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < hw; ++p) {
        std::size_t best_j = i == 0 ? 1 : 0;
        double best = img[best_j * hw + p];
        for (std::size_t j = best_j + 1; j < n; ++j) {
          if (j == i) continue;
          const double cand = img[j * hw + p];
          if (cand > best) {
            best = cand;
            best_j = j;
          }
        }
        out.argmax[(bb * n + i) * hw + p] = best_j;
      }
    }
  }
  return out;
}

Tensor div_loss(const Tensor& fw) { return div_loss(fw, div_branches(fw)); }

Tensor div_loss(const Tensor& fw, const DivBranches& branches) {
  check_fw(fw, "div_loss");
  const std::size_t b = fw.extent(0);
  const std::size_t n = fw.extent(1);
  const std::size_t h = fw.extent(2);
  const std::size_t w = fw.extent(3);
  if (branches.batch != b || branches.regions != n || branches.height != h ||
      branches.width != w) {
    throw DimensionError("div_loss: branch table does not match " + shape_str(fw.shape()));
  }
  auto fw_node = fw.node_ptr();
  if (n < 2) {
    // A single region has no competitors; the loss is defined as zero.
    return detail::make_op({1}, {0.0}, {fw}, [](detail::Node&) {}, "div_loss");
  }
  const std::size_t hw = h * w;
  const double inv_b = 1.0 / static_cast<double>(b);
  const double inv_count = 1.0 / static_cast<double>(n * hw);
  auto idx = std::make_shared<std::vector<std::size_t>>(branches.argmax);

  const double* v = fw.values().data();
  double total = 0.0;
  for (std::size_t bb = 0; bb < b; ++bb) {
    const double* img = v + bb * n * hw;
    double mrg = 0.0;
    for (std::size_t i = 0; i < n * hw; ++i) mrg += img[i];
    mrg *= inv_count;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < hw; ++p) {
        const double f = img[i * hw + p];
        const double m = img[(*idx)[(bb * n + i) * hw + p] * hw + p];
        const double bracket = m - mrg;
        total += f * f * bracket * bracket;
      }
    }
  }
  total *= inv_b;

  return detail::make_op(
      {1}, {total}, {fw},
      [fw_node, idx, b, n, hw, inv_b, inv_count](detail::Node& node) {
        if (!fw_node->requires_grad) return;
        fw_node->ensure_grad();
        const double g0 = node.grad[0] * inv_b;
        const double* v = fw_node->values.data();
        for (std::size_t bb = 0; bb < b; ++bb) {
          const double* img = v + bb * n * hw;
          double* gimg = fw_node->grad.data() + bb * n * hw;
          double mrg = 0.0;
          for (std::size_t i = 0; i < n * hw; ++i) mrg += img[i];
          mrg *= inv_count;
          // s = d(loss_b)/d(mrg) accumulated once; it spreads uniformly through the mean.
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t j = (*idx)[(bb * n + i) * hw + p];
              const double f = img[i * hw + p];
              const double bracket = img[j * hw + p] - mrg;
              gimg[i * hw + p] += g0 * 2.0 * f * bracket * bracket;  // direct term
              const double branch = 2.0 * f * f * bracket;
              gimg[j * hw + p] += g0 * branch;  // competitor (argmax) term
              s += branch;
            }
          }
          const double margin_term = g0 * s * inv_count;
          for (std::size_t i = 0; i < n * hw; ++i) gimg[i] -= margin_term;
        }
      },
      "div_loss");
}

Tensor cgl_pretrain_loss(const Tensor& cr_soft, const ClusterAssignment& cr) {
  if (cr_soft.rank() != 3 || cr_soft.extent(1) != cr.n_regions ||
      cr_soft.extent(2) != cr.n_channels) {
    throw DimensionError("cgl_pretrain_loss: prediction " + shape_str(cr_soft.shape()) +
                         " does not match assignment " + std::to_string(cr.n_regions) + "x" +
                         std::to_string(cr.n_channels));
  }
  constexpr double kEps = 1e-12;
  const std::size_t b = cr_soft.extent(0);
  const std::size_t nc = cr.n_regions * cr.n_channels;
  const Tensor single = cr.matrix();
  std::vector<double> target(b * nc);
  std::vector<double> inverse(b * nc);
  for (std::size_t bb = 0; bb < b; ++bb) {
    for (std::size_t i = 0; i < nc; ++i) {
      target[bb * nc + i] = single.values()[i];
      inverse[bb * nc + i] = 1.0 - single.values()[i];
    }
  }
  const Shape shp = cr_soft.shape();
  Tensor y = Tensor::from(shp, std::move(target));
  Tensor inv_y = Tensor::from(shp, std::move(inverse));
  Tensor hit = mul(y, log(add(cr_soft, kEps)));
  Tensor miss = mul(inv_y, log(add(sub(1.0, cr_soft), kEps)));
  return scale(sum_all(add(hit, miss)), -1.0 / static_cast<double>(b));
}

// --- file exports ----------------------------------------------------------------

void write_signatures(const std::filesystem::path& path, const ChannelSignatures& signatures) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_signatures: cannot open " + path.string());
  out << signatures.channels << " " << signatures.count << " " << signatures.height << " "
      << signatures.width << "\n";
  for (const auto& row : signatures.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << " ";
      out << static_cast<long long>(row[i]);
    }
    out << "\n";
  }
}

void write_assignment(const std::filesystem::path& path, const ClusterAssignment& assignment) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_assignment: cannot open " + path.string());
  for (std::size_t r = 0; r < assignment.n_regions; ++r) {
    for (std::size_t c = 0; c < assignment.n_channels; ++c) {
      if (c) out << " ";
      out << (assignment.channel_to_region[c] == r ? 1 : 0);
    }
    out << "\n";
  }
}

void export_region_maps(const std::filesystem::path& dir, const Tensor& fw_single,
                        std::size_t image_index) {
  if (fw_single.rank() != 3) {
    throw DimensionError("export_region_maps: expected [N,H,W], got " +
                         shape_str(fw_single.shape()));
  }
  const std::size_t n = fw_single.extent(0);
  const std::size_t h = fw_single.extent(1);
  const std::size_t w = fw_single.extent(2);
  const double* v = fw_single.values().data();
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < n; ++i) {
    const double* map = v + i * h * w;
    double lo = map[0];
    double hi = map[0];
    for (std::size_t p = 1; p < h * w; ++p) {
      lo = std::min(lo, map[p]);
      hi = std::max(hi, map[p]);
    }
    const double span = hi - lo;
    char name[64];
    std::snprintf(name, sizeof(name), "region_%zu_%zu.pgm", image_index, i);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw FormatError("export_region_maps: cannot open " + (dir / name).string());
    out << "P5\n" << w << " " << h << "\n255\n";
    for (std::size_t p = 0; p < h * w; ++p) {
      const double norm = span > 0.0 ? (map[p] - lo) / span : 0.0;
      out.put(static_cast<char>(static_cast<int>(std::lround(norm * 255.0))));
    }
  }
}

}  // namespace drag
