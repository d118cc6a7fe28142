#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "drag/kmeans.hpp"
#include "drag/rng.hpp"
#include "drag/tensor.hpp"

namespace drag {

// Spatial location of a channel's maximum activation. x is the row index, y the
// column index; ties resolve to the first position in row-major order.
struct PeakCoord {
  std::size_t x = 0;
  std::size_t y = 0;
};

// [C,H,W] -> one peak per channel
std::vector<PeakCoord> peak_coordinates(const Tensor& fb_single);

// Per-channel peak trace over a training set: row c holds [x1,y1,...,xΩ,yΩ] in
// dataset order.
struct ChannelSignatures {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t count = 0;  // Ω, number of images folded in
  std::vector<std::vector<double>> rows;
};

class SignatureBuilder {
 public:
  // Accepts [C,H,W] or [B,C,H,W]; images must arrive in dataset order.
  void add(const Tensor& fb);
  ChannelSignatures finish() const;

 private:
  ChannelSignatures acc_;
};

ChannelSignatures build_channel_signatures(const std::vector<Tensor>& fbs);

// Hard channel-to-region map: every channel belongs to exactly one region.
struct ClusterAssignment {
  std::size_t n_regions = 0;
  std::size_t n_channels = 0;
  std::vector<std::size_t> channel_to_region;

  bool empty() const { return channel_to_region.empty(); }
  Tensor matrix() const;  // [N,C] of {0,1}
};

ClusterAssignment cluster_channels(const ChannelSignatures& signatures, std::size_t n_regions,
                                   std::uint64_t seed);

// Channel Grouping Layer: a per-channel max-pool descriptor through one hidden
// affine layer to N*C sigmoid logits.
struct CglParams {
  Tensor w1, b1;  // [C,hidden], [hidden]
  Tensor w2, b2;  // [hidden,N*C], [N*C]
  std::size_t n_regions = 0;
  std::size_t n_channels = 0;
  std::size_t hidden = 0;

  static CglParams init(std::size_t channels, std::size_t n_regions, std::size_t hidden,
                        Rng& rng);
  std::vector<Tensor> parameters() const;
};

// [B,C,H,W] -> soft assignment in (0,1), [B,N,C]
Tensor cgl_forward(const Tensor& fb, const CglParams& params);

// Region-aware maps: fw[b,i] = (1/C) * sum_c fb[b,c] * cr[b,i,c].  [B,N,H,W]
Tensor region_features(const Tensor& fb, const Tensor& cr_soft);

// Peak location per (image, region), recomputed each forward pass and excluded
// from gradient flow.
struct RegionPeaks {
  std::size_t batch = 0;
  std::size_t regions = 0;
  std::vector<PeakCoord> peaks;  // batch*regions entries
};
RegionPeaks region_peaks(const Tensor& fw);

// Compactness penalty: activation mass weighted by squared distance to the region
// peak; batch mean. The overload taking RegionPeaks holds the peaks fixed (used by
// gradient checks; semantics are identical since peaks are detached either way).
Tensor dis_loss(const Tensor& fw);
Tensor dis_loss(const Tensor& fw, const RegionPeaks& peaks);

// Competitor choice for the diversity penalty: argmax over the other regions at
// each position.
struct DivBranches {
  std::size_t batch = 0, regions = 0, height = 0, width = 0;
  std::vector<std::size_t> argmax;  // batch*regions*height*width entries
};
DivBranches div_branches(const Tensor& fw);

// Diversity penalty around the per-image mean margin; batch mean; zero when N = 1.
// Gradient flows through the squared map, the argmax branch, and the margin.
Tensor div_loss(const Tensor& fw);
Tensor div_loss(const Tensor& fw, const DivBranches& branches);

// Binary cross-entropy between the soft assignment [B,N,C] and the hard K-means
// result, summed over N*C with eps = 1e-12 inside the logs, batch mean.
Tensor cgl_pretrain_loss(const Tensor& cr_soft, const ClusterAssignment& cr);

// --- file exports ----------------------------------------------------------------

// One line per channel of space-separated ints after a "C Ω H W" header.
void write_signatures(const std::filesystem::path& path, const ChannelSignatures& signatures);

// N lines of C space-separated 0/1 values.
void write_assignment(const std::filesystem::path& path, const ClusterAssignment& assignment);

// One min-max normalized P5 graymap per region: region_<image>_<i>.pgm.
void export_region_maps(const std::filesystem::path& dir, const Tensor& fw_single,
                        std::size_t image_index);

}  // namespace drag
