#pragma once

// Self-describing binary archive used for every checkpoint and trajectory file.
//
// Layout (little-endian):
//   8 bytes   magic "ONRWARC1"
//   8 bytes   header length L (uint64)
//   L bytes   JSON header: {"meta": {...}, "tensors": [{"name", "shape", "offset"}...]}
//   ...       float32 payload, tensors back to back; offsets count floats

#include "onrw/tensor.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>

namespace onrw {

struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;

    void put(const std::string& name, Tensor t) { tensors[name] = std::move(t); }
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }

    void save(const std::string& path) const;
    static Archive load(const std::string& path);
};

}  // namespace onrw
