#pragma once

// Procedural labelled toy corpus: one coloured shape on a smooth two-colour
// gradient. The class label doubles as the image caption.

#include "onrw/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace onrw::data {

inline constexpr int kNumClasses = 4;
const std::vector<std::string>& class_names();

struct Dataset {
    int resolution = 0;
    std::vector<Tensor> images;  // each [1,3,R,R], 8-bit quantized, in [-1,1]
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    /// Stack images[first .. first+count) into one [count,3,R,R] batch.
    Tensor batch(const std::vector<int>& indices) const;
};

/// Renders image `index` of the stream with the given seed. A given
/// (seed, index) pair always yields the same image and label.
Tensor render_toy_image(int resolution, std::uint64_t seed, std::uint64_t index, int& label);

Dataset make_toy_dataset(int count, int resolution, std::uint64_t seed, std::uint64_t first_index = 0);

/// Folder layout: PNG files plus `labels.txt` with lines "<file> <label>".
Dataset load_folder(const std::string& dir);
void save_folder(const Dataset& ds, const std::string& dir);

/// Validates training preconditions (non-empty, one resolution, 3 channels, values in [-1,1]).
void validate(const Dataset& ds);

}  // namespace onrw::data
