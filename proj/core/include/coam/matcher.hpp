#pragma once

#include <string>
#include <vector>

#include "coam/network.hpp"

namespace coam {

struct GridDescriptors {
    int grid_size = 0;       // G
    int descriptor_dim = 0;  // D
    int image_size = 0;
    std::vector<double> descriptors;  // G*G rows of D, row-major over (gy,gx), unit norm
    std::vector<double> scores;       // G*G distinctiveness values
    std::vector<double> pixel_x, pixel_y;  // grid index -> image pixel coordinate

    const double* desc(int cell) const {
        return descriptors.data() + static_cast<std::size_t>(cell) * descriptor_dim;
    }
};

struct Match {
    double x1, y1, x2, y2;
    double score;
};

struct CorrespondenceSet {
    std::vector<Match> matches;
};

// Bilinear sampling of descriptors (renormalized) and scores (not) on a GxG
// grid anchored at half-pixel centers: pixel = (g + 0.5) * (S / G) - 0.5.
GridDescriptors grid_sample(const DescriptorMap& d, const DistinctivenessMap& r, int grid_size);

// Eq-style similarity: c = r1 * r2 * (d1 . d2), descriptors unit norm.
double similarity(const double* d1, double r1, const double* d2, double r2, int dim);

// Mutual nearest neighbors over the exhaustive G^2 x G^2 score volume.
// One-to-one by construction; tie-break everywhere is lowest row-major index.
CorrespondenceSet mutual_nn_matches(const GridDescriptors& g1, const GridDescriptors& g2);
// Blocked evaluation; must produce the identical set (used as the fast path).
CorrespondenceSet mutual_nn_matches_blocked(const GridDescriptors& g1, const GridDescriptors& g2,
                                            int block);

// At most K matches sorted by score descending, ties by p1 row-major order.
CorrespondenceSet top_k(const CorrespondenceSet& set, int k);

// Subpixel refinement of p2 over a 3x3 pixel neighborhood at full descriptor
// resolution: min-subtracted similarity-weighted centroid. If all weights
// vanish the original location is kept.
CorrespondenceSet refine_matches(const DescriptorMap& d1, const DescriptorMap& d2,
                                 const CorrespondenceSet& matches);

// For every grid cell of the viewpoint image, copy the color of its
// best-scoring match in the source image; bilinearly upsampled to image size.
Tensor dense_resample(const Tensor& source_image, const GridDescriptors& grid_view,
                      const GridDescriptors& grid_source);

struct InvarianceStats {
    double mean = 0, stddev = 0;
    int count = 0;
};
// Mean/stddev of per-correspondence L1 descriptor difference. Needs >= 10 pairs.
InvarianceStats descriptor_invariance(const DescriptorMap& d_query, const DescriptorMap& d_target,
                                      const std::vector<std::pair<std::pair<double, double>,
                                                                  std::pair<double, double>>>& corrs);

// Bilinear descriptor lookup (renormalized) at an arbitrary subpixel location.
std::vector<double> sample_descriptor(const DescriptorMap& d, double x, double y);

// Match file: header "# coam-match v1 G=<G> K=<K>", then "x1 y1 x2 y2 score"
// with 6 decimals per line.
void save_matches(const std::string& path, const CorrespondenceSet& set, int grid_size, int k);
CorrespondenceSet load_matches(const std::string& path);

}  // namespace coam
