#ifndef DETRACK_TENSOR_HPP_
#define DETRACK_TENSOR_HPP_

#include <cstddef>
#include <filesystem>
#include <vector>

namespace detrack {

// Dense H x W x D map of doubles, row-major with the channel fastest:
// flat index = (i * width + j) * channels + c.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int d)
      : height(h), width(w), channels(d),
        data(static_cast<std::size_t>(h) * w * d, 0.0) {}

  std::size_t idx(int i, int j, int c) const {
    return (static_cast<std::size_t>(i) * width + j) * channels + c;
  }
  double at(int i, int j, int c) const { return data[idx(i, j, c)]; }
  double& at(int i, int j, int c) { return data[idx(i, j, c)]; }

  bool in_bounds(int i, int j) const { return i >= 0 && i < height && j >= 0 && j < width; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const FeatureMap& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Binary tensor file: magic "DTT1", then height, width, channels as
// little-endian uint32, then height*width*channels little-endian float64
// in FeatureMap order.
void write_dtt1(const std::filesystem::path& path, const FeatureMap& m);
FeatureMap read_dtt1(const std::filesystem::path& path);

}  // namespace detrack

#endif  // DETRACK_TENSOR_HPP_
