#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "earvit/rng.hpp"
#include "earvit/tensor.hpp"
#include "earvit/vit.hpp"

namespace earvit::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
    std::vector<double> v(rows * dim);
    for (std::size_t r = 0; r < rows; ++r) {
        double n = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            v[r * dim + c] = rng.normal();
            n += v[r * dim + c] * v[r * dim + c];
        }
        n = std::sqrt(n);
        for (std::size_t c = 0; c < dim; ++c) v[r * dim + c] /= n;
    }
    return Tensor({rows, dim}, std::move(v));
}

// depth 1, D 8, H 2 on a single-channel image; small enough for exhaustive
// finite differences.
inline ViTConfig tiny_config(int image, int patch, int stride, int depth = 1) {
    ViTConfig c;
    c.depth = depth;
    c.width = 8;
    c.heads = 2;
    c.channels = 1;
    c.grid = PatchGrid::make(image, patch, stride);
    return c;
}

inline std::vector<Tensor> param_tensors(const ModelParams& params) {
    std::vector<Tensor> out;
    for (auto& nt : params.named()) out.push_back(nt.tensor);
    return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
   public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("earvit_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

   private:
    std::filesystem::path path_;
};

}  // namespace earvit::testing
