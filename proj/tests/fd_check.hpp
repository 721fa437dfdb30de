#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "blockdiff/model.hpp"

namespace blockdiff::testutil {

// Central finite differences (h = 1e-5) over every parameter entry against
// the analytic gradients; returns the worst relative error. Entries where
// both gradients are below `floor` are compared absolutely.
inline double max_grad_rel_err(blockdiff::ModelParams params,
                               const std::function<double(const blockdiff::ModelParams&)>& loss_fn,
                               const blockdiff::ModelParams& grads, double h = 1e-5,
                               double floor = 1e-6) {
    std::vector<blockdiff::Tensor*> pt;
    std::vector<const blockdiff::Tensor*> gt;
    params.for_each_named([&](const std::string&, blockdiff::Tensor& t) { pt.push_back(&t); });
    grads.for_each_named([&](const std::string&, const blockdiff::Tensor& t) { gt.push_back(&t); });
    double worst = 0.0;
    for (size_t k = 0; k < pt.size(); ++k) {
        for (size_t i = 0; i < pt[k]->data.size(); ++i) {
            const double orig = pt[k]->data[i];
            pt[k]->data[i] = orig + h;
            const double lp = loss_fn(params);
            pt[k]->data[i] = orig - h;
            const double lm = loss_fn(params);
            pt[k]->data[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double ad = gt[k]->data[i];
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

}  // namespace blockdiff::testutil
