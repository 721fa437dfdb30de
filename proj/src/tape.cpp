#include "blockdiff/tape.hpp"

#include <cmath>
#include <cstring>

#include "blockdiff/kernels.hpp"

namespace blockdiff {

Tape::NodeId Tape::push(Tensor value, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back)});
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor value) { return push(std::move(value), nullptr); }

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw DimError("add: shape mismatch");
    Tensor y = ta;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += tb.data[i];
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [a, b, out](Tape& t) {
        const Tensor& gy = t.grad(out);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (size_t i = 0; i < gy.data.size(); ++i) {
            ga.data[i] += gy.data[i];
            gb.data[i] += gy.data[i];
        }
    };
    return out;
}

Tape::NodeId Tape::scale(NodeId x, double c) {
    Tensor y = value(x);
    for (double& v : y.data) v *= c;
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, c, out](Tape& t) {
        const Tensor& gy = t.grad(out);
        Tensor& gx = t.grad_mut(x);
        for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += c * gy.data[i];
    };
    return out;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.cols() != tb.rows())
        throw DimError("matmul: incompatible shapes " + ta.shape_str() + " " + tb.shape_str());
    const int64_t m = ta.rows(), k = ta.cols(), n = tb.cols();
    Tensor y = Tensor::zeros({m, n});
    kernels::linear(ta.data.data(), m, k, tb.data.data(), nullptr, n, y.data.data());
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [a, b, out, m, k, n](Tape& t) {
        const Tensor& gy = t.grad(out);
        const Tensor& ta = t.value(a);
        const Tensor& tb = t.value(b);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        // ga += gy @ b^T
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < k; ++j)
                ga.at(i, j) += kernels::dot(gy.row_ptr(i), tb.row_ptr(j), n);
        // gb += a^T @ gy
        for (int64_t i = 0; i < m; ++i) {
            const double* gyr = gy.row_ptr(i);
            for (int64_t j = 0; j < k; ++j) kernels::axpy(ta.at(i, j), gyr, n, gb.row_ptr(j));
        }
    };
    return out;
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.cols() != tb.cols())
        throw DimError("matmul_nt: incompatible shapes");
    const int64_t m = ta.rows(), k = ta.cols(), n = tb.rows();
    Tensor y = Tensor::zeros({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            y.at(i, j) = kernels::dot(ta.row_ptr(i), tb.row_ptr(j), k);
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [a, b, out, m, k, n](Tape& t) {
        const Tensor& gy = t.grad(out);
        const Tensor& ta = t.value(a);
        const Tensor& tb = t.value(b);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                const double g = gy.at(i, j);
                if (g == 0.0) continue;
                kernels::axpy(g, tb.row_ptr(j), k, ga.row_ptr(i));
                kernels::axpy(g, ta.row_ptr(i), k, gb.row_ptr(j));
            }
    };
    return out;
}

Tape::NodeId Tape::linear(NodeId x, NodeId w, NodeId bias) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(bias);
    if (tx.cols() != tw.rows() || tb.numel() != tw.cols())
        throw DimError("linear: incompatible shapes");
    const int64_t rows = tx.rows(), in = tx.cols(), out_dim = tw.cols();
    Tensor y = Tensor::zeros({rows, out_dim});
    kernels::linear(tx.data.data(), rows, in, tw.data.data(), tb.data.data(), out_dim,
                    y.data.data());
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, w, bias, out, rows, in, out_dim](Tape& t) {
        const Tensor& gy = t.grad(out);
        const Tensor& tx = t.value(x);
        const Tensor& tw = t.value(w);
        Tensor& gx = t.grad_mut(x);
        Tensor& gw = t.grad_mut(w);
        Tensor& gb = t.grad_mut(bias);
        for (int64_t r = 0; r < rows; ++r) {
            const double* gyr = gy.row_ptr(r);
            const double* xr = tx.row_ptr(r);
            double* gxr = gx.row_ptr(r);
            for (int64_t k = 0; k < in; ++k) {
                gxr[k] += kernels::dot(gyr, tw.row_ptr(k), out_dim);
                kernels::axpy(xr[k], gyr, out_dim, gw.row_ptr(k));
            }
            kernels::axpy(1.0, gyr, out_dim, gb.data.data());
        }
    };
    return out;
}

Tape::NodeId Tape::slice_cols(NodeId x, int64_t start, int64_t width) {
    const Tensor& tx = value(x);
    if (start < 0 || start + width > tx.cols()) throw DimError("slice_cols: out of range");
    const int64_t rows = tx.rows();
    Tensor y = Tensor::zeros({rows, width});
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(y.row_ptr(r), tx.row_ptr(r) + start, static_cast<size_t>(width) * sizeof(double));
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, out, start, width, rows](Tape& t) {
        const Tensor& gy = t.grad(out);
        Tensor& gx = t.grad_mut(x);
        for (int64_t r = 0; r < rows; ++r)
            kernels::axpy(1.0, gy.row_ptr(r), width, gx.row_ptr(r) + start);
    };
    return out;
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw DimError("concat_cols: empty input");
    const int64_t rows = value(parts[0]).rows();
    int64_t total = 0;
    for (NodeId p : parts) {
        if (value(p).rows() != rows) throw DimError("concat_cols: row mismatch");
        total += value(p).cols();
    }
    Tensor y = Tensor::zeros({rows, total});
    int64_t off = 0;
    for (NodeId p : parts) {
        const Tensor& tp = value(p);
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(y.row_ptr(r) + off, tp.row_ptr(r),
                        static_cast<size_t>(tp.cols()) * sizeof(double));
        off += tp.cols();
    }
    NodeId out = push(std::move(y), nullptr);
    std::vector<NodeId> ps = parts;
    nodes_[static_cast<size_t>(out)].back = [ps, out, rows](Tape& t) {
        const Tensor& gy = t.grad(out);
        int64_t off = 0;
        for (NodeId p : ps) {
            Tensor& gp = t.grad_mut(p);
            const int64_t w = gp.cols();
            for (int64_t r = 0; r < rows; ++r)
                kernels::axpy(1.0, gy.row_ptr(r) + off, w, gp.row_ptr(r));
            off += w;
        }
    };
    return out;
}

Tape::NodeId Tape::embed(NodeId table, const std::vector<int>& ids) {
    const Tensor& tt = value(table);
    const int64_t d = tt.cols();
    Tensor y = Tensor::zeros({static_cast<int64_t>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || ids[r] >= tt.rows())
            throw RangeError("embed: id " + std::to_string(ids[r]) + " out of range");
        std::memcpy(y.row_ptr(static_cast<int64_t>(r)), tt.row_ptr(ids[r]),
                    static_cast<size_t>(d) * sizeof(double));
    }
    NodeId out = push(std::move(y), nullptr);
    std::vector<int> idv = ids;
    nodes_[static_cast<size_t>(out)].back = [table, out, idv, d](Tape& t) {
        const Tensor& gy = t.grad(out);
        Tensor& gt = t.grad_mut(table);
        for (size_t r = 0; r < idv.size(); ++r)
            kernels::axpy(1.0, gy.row_ptr(static_cast<int64_t>(r)), d, gt.row_ptr(idv[r]));
    };
    return out;
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
    const Tensor& tx = value(x);
    const int64_t rows = tx.rows(), n = tx.cols();
    if (value(gain).numel() != n || value(bias).numel() != n)
        throw DimError("layer_norm: gain/bias size mismatch");
    Tensor y = Tensor::zeros({rows, n});
    std::vector<double> means(static_cast<size_t>(rows)), rstds(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r)
        kernels::layer_norm_row(tx.row_ptr(r), n, value(gain).data.data(),
                                value(bias).data.data(), y.row_ptr(r), &means[static_cast<size_t>(r)],
                                &rstds[static_cast<size_t>(r)]);
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, gain, bias, out, rows, n, means, rstds](Tape& t) {
        const Tensor& gy = t.grad(out);
        const Tensor& tx = t.value(x);
        const Tensor& tg = t.value(gain);
        Tensor& gx = t.grad_mut(x);
        Tensor& gg = t.grad_mut(gain);
        Tensor& gb = t.grad_mut(bias);
        std::vector<double> xhat(static_cast<size_t>(n)), gxh(static_cast<size_t>(n));
        for (int64_t r = 0; r < rows; ++r) {
            const double mean = means[static_cast<size_t>(r)];
            const double rstd = rstds[static_cast<size_t>(r)];
            const double* xr = tx.row_ptr(r);
            const double* gyr = gy.row_ptr(r);
            double sum_g = 0.0, sum_gx = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                xhat[static_cast<size_t>(i)] = (xr[i] - mean) * rstd;
                gxh[static_cast<size_t>(i)] = gyr[i] * tg.at(i);
                gg.at(i) += gyr[i] * xhat[static_cast<size_t>(i)];
                gb.at(i) += gyr[i];
                sum_g += gxh[static_cast<size_t>(i)];
                sum_gx += gxh[static_cast<size_t>(i)] * xhat[static_cast<size_t>(i)];
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            double* gxr = gx.row_ptr(r);
            for (int64_t i = 0; i < n; ++i)
                gxr[i] += rstd * (gxh[static_cast<size_t>(i)] - inv_n * sum_g -
                                  xhat[static_cast<size_t>(i)] * inv_n * sum_gx);
        }
    };
    return out;
}

Tape::NodeId Tape::gelu(NodeId x) {
    Tensor y = value(x);
    for (double& v : y.data) v = kernels::gelu(v);
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, out](Tape& t) {
        const Tensor& gy = t.grad(out);
        const Tensor& tx = t.value(x);
        Tensor& gx = t.grad_mut(x);
        for (size_t i = 0; i < gy.data.size(); ++i)
            gx.data[i] += gy.data[i] * kernels::gelu_grad(tx.data[i]);
    };
    return out;
}

Tape::NodeId Tape::softmax_rows(NodeId x) {
    const Tensor& tx = value(x);
    const int64_t rows = tx.rows(), n = tx.cols();
    Tensor y = Tensor::zeros({rows, n});
    for (int64_t r = 0; r < rows; ++r)
        kernels::softmax_masked_row(tx.row_ptr(r), nullptr, n, y.row_ptr(r));
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, out, rows, n](Tape& t) {
        const Tensor& gy = t.grad(out);
        const Tensor& ty = t.value(out);
        Tensor& gx = t.grad_mut(x);
        for (int64_t r = 0; r < rows; ++r) {
            const double s = kernels::dot(gy.row_ptr(r), ty.row_ptr(r), n);
            const double* gyr = gy.row_ptr(r);
            const double* yr = ty.row_ptr(r);
            double* gxr = gx.row_ptr(r);
            for (int64_t i = 0; i < n; ++i) gxr[i] += yr[i] * (gyr[i] - s);
        }
    };
    return out;
}

Tape::NodeId Tape::softmax_rows_masked(NodeId x, const std::vector<uint8_t>& allow) {
    const Tensor& tx = value(x);
    const int64_t rows = tx.rows(), n = tx.cols();
    if (static_cast<int64_t>(allow.size()) != rows * n)
        throw DimError("softmax_rows_masked: mask size mismatch");
    for (int64_t r = 0; r < rows; ++r) {
        bool any = false;
        for (int64_t j = 0; j < n && !any; ++j) any = allow[static_cast<size_t>(r * n + j)] != 0;
        if (!any) throw LayoutError("softmax_rows_masked: all-false row " + std::to_string(r));
    }
    Tensor y = Tensor::zeros({rows, n});
    for (int64_t r = 0; r < rows; ++r)
        kernels::softmax_masked_row(tx.row_ptr(r), allow.data() + r * n, n, y.row_ptr(r));
    NodeId out = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, out, rows, n](Tape& t) {
        // same formula as softmax_rows: disallowed probs are exactly 0, so
        // their gradient contribution vanishes
        const Tensor& gy = t.grad(out);
        const Tensor& ty = t.value(out);
        Tensor& gx = t.grad_mut(x);
        for (int64_t r = 0; r < rows; ++r) {
            const double s = kernels::dot(gy.row_ptr(r), ty.row_ptr(r), n);
            const double* gyr = gy.row_ptr(r);
            const double* yr = ty.row_ptr(r);
            double* gxr = gx.row_ptr(r);
            for (int64_t i = 0; i < n; ++i) gxr[i] += yr[i] * (gyr[i] - s);
        }
    };
    return out;
}

Tape::NodeId Tape::sum(NodeId x) {
    double s = 0.0;
    for (double v : value(x).data) s += v;
    NodeId out = push(Tensor::scalar(s), nullptr);
    nodes_[static_cast<size_t>(out)].back = [x, out](Tape& t) {
        const double g = t.grad(out).data[0];
        Tensor& gx = t.grad_mut(x);
        for (double& v : gx.data) v += g;
    };
    return out;
}

Tape::NodeId Tape::cross_entropy(NodeId logits, const std::vector<int>& targets,
                                 const std::vector<uint8_t>& row_mask) {
    const Tensor& tl = value(logits);
    const int64_t rows = tl.rows(), v = tl.cols();
    if (static_cast<int64_t>(targets.size()) != rows ||
        static_cast<int64_t>(row_mask.size()) != rows)
        throw DimError("cross_entropy: targets/mask size mismatch");
    int64_t count = 0;
    double total = 0.0;
    std::vector<double> logp(static_cast<size_t>(v));
    // per selected row store softmax probabilities for backward
    std::vector<std::pair<int64_t, std::vector<double>>> saved;
    for (int64_t r = 0; r < rows; ++r) {
        if (!row_mask[static_cast<size_t>(r)]) continue;
        const int tgt = targets[static_cast<size_t>(r)];
        if (tgt < 0 || tgt >= v) throw RangeError("cross_entropy: target out of range");
        kernels::log_softmax_row(tl.row_ptr(r), v, logp.data());
        total -= logp[static_cast<size_t>(tgt)];
        std::vector<double> probs(static_cast<size_t>(v));
        for (int64_t i = 0; i < v; ++i) probs[static_cast<size_t>(i)] = std::exp(logp[static_cast<size_t>(i)]);
        saved.emplace_back(r, std::move(probs));
        ++count;
    }
    if (count == 0) throw UndefinedMeanError("cross_entropy: all rows masked out");
    NodeId out = push(Tensor::scalar(total / static_cast<double>(count)), nullptr);
    std::vector<int> tv = targets;
    nodes_[static_cast<size_t>(out)].back = [logits, out, saved, tv, v, count](Tape& t) {
        const double g = t.grad(out).data[0] / static_cast<double>(count);
        Tensor& gl = t.grad_mut(logits);
        for (const auto& [r, probs] : saved) {
            double* glr = gl.row_ptr(r);
            for (int64_t i = 0; i < v; ++i) glr[i] += g * probs[static_cast<size_t>(i)];
            glr[tv[static_cast<size_t>(r)]] -= g;
        }
    };
    return out;
}

Tape::NodeId Tape::kl_rows(NodeId logits, const std::vector<int>& row_ids,
                           const std::vector<std::vector<double>>& targets,
                           const std::vector<double>& weights, KlDirection direction) {
    const Tensor& tl = value(logits);
    const int64_t v = tl.cols();
    if (row_ids.size() != targets.size() || row_ids.size() != weights.size())
        throw DimError("kl_rows: row/target/weight count mismatch");
    double total = 0.0;
    std::vector<double> logq(static_cast<size_t>(v));
    // saved per selected row: student probs and per-entry s = ln q - ln p~
    struct Saved {
        int64_t row;
        double w;
        double kl;
        std::vector<double> q;
        std::vector<double> s;  // reverse direction only
    };
    std::vector<Saved> saved;
    for (size_t k = 0; k < row_ids.size(); ++k) {
        const int64_t r = row_ids[k];
        if (r < 0 || r >= tl.rows()) throw RangeError("kl_rows: row out of range");
        const std::vector<double>& p = targets[k];
        if (static_cast<int64_t>(p.size()) != v) throw DimError("kl_rows: target width mismatch");
        kernels::log_softmax_row(tl.row_ptr(r), v, logq.data());
        Saved sv;
        sv.row = r;
        sv.w = weights[k];
        sv.q.resize(static_cast<size_t>(v));
        for (int64_t i = 0; i < v; ++i) sv.q[static_cast<size_t>(i)] = std::exp(logq[static_cast<size_t>(i)]);
        double kl = 0.0;
        if (direction == KlDirection::Forward) {
            for (int64_t i = 0; i < v; ++i) {
                const double pi = p[static_cast<size_t>(i)];
                if (pi == 0.0) continue;
                kl += pi * (std::log(pi) - logq[static_cast<size_t>(i)]);
            }
        } else {
            sv.s.resize(static_cast<size_t>(v));
            for (int64_t i = 0; i < v; ++i) {
                const double qi = sv.q[static_cast<size_t>(i)];
                const double lp = std::log(std::max(p[static_cast<size_t>(i)], kEpsKl));
                sv.s[static_cast<size_t>(i)] = logq[static_cast<size_t>(i)] - lp;
                kl += qi * sv.s[static_cast<size_t>(i)];
            }
        }
        sv.kl = kl;
        total += sv.w * kl;
        saved.push_back(std::move(sv));
    }
    NodeId out = push(Tensor::scalar(total), nullptr);
    std::vector<std::vector<double>> tv = targets;
    nodes_[static_cast<size_t>(out)].back = [logits, out, saved, tv, v, direction](Tape& t) {
        const double g = t.grad(out).data[0];
        Tensor& gl = t.grad_mut(logits);
        for (size_t k = 0; k < saved.size(); ++k) {
            const Saved& sv = saved[k];
            double* glr = gl.row_ptr(sv.row);
            if (direction == KlDirection::Forward) {
                const std::vector<double>& p = tv[k];
                for (int64_t i = 0; i < v; ++i)
                    glr[i] += g * sv.w * (sv.q[static_cast<size_t>(i)] - p[static_cast<size_t>(i)]);
            } else {
                for (int64_t i = 0; i < v; ++i)
                    glr[i] += g * sv.w * sv.q[static_cast<size_t>(i)] *
                              (sv.s[static_cast<size_t>(i)] - sv.kl);
            }
        }
    };
    return out;
}

void Tape::backward(NodeId loss) {
    Tensor& lt = nodes_[static_cast<size_t>(loss)].value;
    if (!lt.is_scalar()) throw DimError("backward: loss must be scalar");
    for (Node& n : nodes_) {
        n.grad = Tensor::zeros(n.value.shape);
        if (n.value.is_scalar()) n.grad = Tensor::scalar(0.0);
    }
    nodes_[static_cast<size_t>(loss)].grad.data[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
        if (i > static_cast<size_t>(loss)) continue;  // nodes past the loss cannot contribute
        if (nodes_[i].back) nodes_[i].back(*this);
    }
}

}  // namespace blockdiff
