#pragma once

// Scoring decoders. Each maps a batch of condition pairs (head row,
// relation row) to a score against every candidate entity; higher is
// more plausible.

#include "kbgsat/config_types.hpp"
#include "kbgsat/tensor.hpp"

namespace kbgsat {

template <typename Scalar>
struct ConvEParams {
    Parameter<Scalar> kernels;      // channels x (1*kh*kw), viewed as [channels, 1, kh, kw]
    Parameter<Scalar> kernel_bias;  // channels x 1
    Parameter<Scalar> fc;           // d x flat_features
    Parameter<Scalar> fc_bias;      // 1 x d
};

template <typename Scalar>
struct ConvELeaves {
    Var<Scalar> kernels, kernel_bias, fc, fc_bias;
};

/// phi = -||h + r - t||_1 for every candidate t.
template <typename Scalar>
Var<Scalar> score_transe(const Var<Scalar>& heads, const Var<Scalar>& relations, const Var<Scalar>& candidates) {
    return pairwise_neg_l1(add(heads, relations), candidates);
}

/// phi = sum_m h[m] r[m] t[m] for every candidate t.
template <typename Scalar>
Var<Scalar> score_distmult(const Var<Scalar>& heads, const Var<Scalar>& relations, const Var<Scalar>& candidates) {
    return matmul(mul(heads, relations), transpose(candidates));
}

/// phi = relu(W_c vec(relu(conv([h ; r] reshaped, kernels))) + b) . t
template <typename Scalar>
Var<Scalar> score_conve(const Var<Scalar>& heads, const Var<Scalar>& relations, const Var<Scalar>& candidates,
                        const ConvELeaves<Scalar>& p, const ConvEShape& shape) {
    const Index batch = heads.rows();
    const Index d = heads.cols();
    if (static_cast<Index>(shape.rows) * shape.cols != d)
        throw DimensionError("score_conve: reshape " + std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
                             " does not cover dimension " + std::to_string(d));
    if (shape.kernel_h > shape.image_h() || shape.kernel_w > shape.cols)
        throw DimensionError("score_conve: kernel larger than the stacked input");
    // Row-major [h ; r] of two rows x cols images is the plain concatenation.
    auto image = reshape(concat<Scalar>({heads, relations}), Shape{batch, 1, shape.image_h(), shape.cols});
    auto kernels = reshape(p.kernels, Shape{shape.channels, 1, shape.kernel_h, shape.kernel_w});
    auto features = relu(conv2d_valid(image, kernels, p.kernel_bias));
    auto flat = reshape(features, Shape{batch, static_cast<Index>(shape.flat_features())});
    auto hidden = relu(add_row(matmul(flat, transpose(p.fc)), p.fc_bias));
    return matmul(hidden, transpose(candidates));
}

/// Elementwise sigmoid of a score matrix, kept strictly below 1.
template <typename Scalar>
Matrix<Scalar> probabilities(const Matrix<Scalar>& scores) {
    const Scalar below_one = std::nextafter(Scalar(1), Scalar(0));
    return scores.unaryExpr([below_one](Scalar x) { return std::min(stable_sigmoid(x), below_one); });
}

}  // namespace kbgsat
