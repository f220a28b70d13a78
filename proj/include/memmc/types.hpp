#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace memmc {

// Token and parameter matrices are row-major: rows = tokens/slots, cols = channels.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

/// Learnable tensor: value plus accumulated gradient of the same shape.
template <typename S>
struct Param {
    Mat<S> v;
    Mat<S> g;

    void resize(Index rows, Index cols) {
        v = Mat<S>::Zero(rows, cols);
        g = Mat<S>::Zero(rows, cols);
    }
    void zero_grad() { g.setZero(); }
    Index rows() const { return v.rows(); }
    Index cols() const { return v.cols(); }
    Index size() const { return v.size(); }
};

/// Callback signature used to enumerate every parameter of a module in a
/// fixed, code-defined order. `decay` marks tensors subject to weight decay.
template <typename S>
struct ParamVisitor {
    virtual ~ParamVisitor() = default;
    virtual void operator()(const std::string& name, Param<S>& p, bool decay) = 0;
};

template <typename S, typename Fn>
struct ParamVisitorFn final : ParamVisitor<S> {
    Fn fn;
    explicit ParamVisitorFn(Fn f) : fn(std::move(f)) {}
    void operator()(const std::string& name, Param<S>& p, bool decay) override { fn(name, p, decay); }
};

template <typename S>
bool all_finite(const Mat<S>& m) {
    return m.allFinite();
}

}  // namespace memmc
