// SPDX-License-Identifier: Apache-2.0
#include "msvq/image.hpp"

#include <algorithm>

namespace msvq {

Image batch_image(const ImageBatch& batch, std::size_t i) {
  require_rank(batch, 4, "batch_image");
  Image img(batch.dim(1), batch.dim(2), batch.dim(3));
  const std::size_t len = img.pixels.size();
  std::copy_n(batch.data().begin() + i * len, len, img.pixels.begin());
  return img;
}

ImageBatch stack_images(const std::vector<Image>& images) {
  if (images.empty()) return ImageBatch({0, 0, 0, 0});
  const Image& first = images.front();
  ImageBatch out({images.size(), first.channels, first.height, first.width});
  const std::size_t len = first.pixels.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].pixels.size() != len || images[i].height != first.height) {
      throw ShapeError("stack_images: images have differing shapes");
    }
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), out.data().begin() + i * len);
  }
  return out;
}

}  // namespace msvq
