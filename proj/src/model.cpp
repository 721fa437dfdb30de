#include "blockdiff/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "blockdiff/kernels.hpp"

namespace blockdiff {

using ordered_json = nlohmann::ordered_json;

void ModelConfig::validate() const {
    if (vocab_size < 4) throw ConfigError("model: vocab_size must be >= 4");
    if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || ffn_mult <= 0 || max_positions <= 0)
        throw ConfigError("model: all dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
}

ModelParams ModelParams::zeros_like(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d_model, f = static_cast<int64_t>(cfg.ffn_mult) * cfg.d_model;
    ModelParams p;
    p.config = cfg;
    p.tok_emb = Tensor::zeros({cfg.vocab_size, d});
    p.pos_emb = Tensor::zeros({cfg.max_positions, d});
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerParams L;
        L.ln1_g = Tensor::zeros({d});
        L.ln1_b = Tensor::zeros({d});
        L.wq = Tensor::zeros({d, d});
        L.bq = Tensor::zeros({d});
        L.wk = Tensor::zeros({d, d});
        L.bk = Tensor::zeros({d});
        L.wv = Tensor::zeros({d, d});
        L.bv = Tensor::zeros({d});
        L.wo = Tensor::zeros({d, d});
        L.bo = Tensor::zeros({d});
        L.ln2_g = Tensor::zeros({d});
        L.ln2_b = Tensor::zeros({d});
        L.w_in = Tensor::zeros({d, f});
        L.b_in = Tensor::zeros({f});
        L.w_out = Tensor::zeros({f, d});
        L.b_out = Tensor::zeros({d});
        p.layers.push_back(std::move(L));
    }
    p.lnf_g = Tensor::zeros({d});
    p.lnf_b = Tensor::zeros({d});
    p.lm_w = Tensor::zeros({d, cfg.vocab_size});
    p.lm_b = Tensor::zeros({cfg.vocab_size});
    return p;
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
    ModelParams p = ModelParams::zeros_like(cfg);
    Rng rng(seed);
    const double scale = 0.02;
    p.for_each_named([&](const std::string& name, Tensor& t) {
        const bool is_gain = name.ends_with("ln1_g") || name.ends_with("ln2_g") ||
                             name.ends_with("lnf_g");
        const bool is_weight = t.shape.size() == 2;
        if (is_gain) {
            for (double& v : t.data) v = 1.0;
        } else if (is_weight) {
            for (double& v : t.data) v = scale * rng.next_gaussian();
        }
        // biases stay zero
    });
    return p;
}

namespace {
constexpr char kMagic[8] = {'B', 'D', 'L', 'M', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    ordered_json header;
    header["version"] = 1;
    header["config"] = {{"vocab_size", params.config.vocab_size},
                        {"d_model", params.config.d_model},
                        {"n_heads", params.config.n_heads},
                        {"n_layers", params.config.n_layers},
                        {"ffn_mult", params.config.ffn_mult},
                        {"max_positions", params.config.max_positions}};
    const std::string hs = header.dump();
    write_u32(out, static_cast<uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    params.for_each_named([&](const std::string& name, const Tensor& t) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) out.write(reinterpret_cast<const char*>(&d), sizeof(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    });
    if (!out) throw Error("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("load_checkpoint: missing checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ParseError("load_checkpoint: bad magic in " + path);
    const uint32_t hlen = read_u32(in);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    ordered_json header;
    try {
        header = ordered_json::parse(hs);
    } catch (const std::exception& e) {
        throw ParseError(std::string("load_checkpoint: bad header: ") + e.what());
    }
    if (header.at("version").get<int>() != 1)
        throw ParseError("load_checkpoint: unsupported version");
    ModelConfig cfg;
    const auto& jc = header.at("config");
    cfg.vocab_size = jc.at("vocab_size").get<int>();
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.n_heads = jc.at("n_heads").get<int>();
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.ffn_mult = jc.at("ffn_mult").get<int>();
    cfg.max_positions = jc.at("max_positions").get<int>();
    ModelParams p = ModelParams::zeros_like(cfg);
    p.for_each_named([&](const std::string& name, Tensor& t) {
        const uint32_t nlen = read_u32(in);
        std::string n(nlen, '\0');
        in.read(n.data(), nlen);
        if (n != name) throw ParseError("load_checkpoint: expected tensor " + name + ", got " + n);
        const uint32_t rank = read_u32(in);
        std::vector<int64_t> shape(rank);
        for (uint32_t i = 0; i < rank; ++i)
            in.read(reinterpret_cast<char*>(&shape[i]), sizeof(int64_t));
        if (shape != t.shape) throw ParseError("load_checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw ParseError("load_checkpoint: truncated data for " + name);
    });
    return p;
}

std::string to_string(CacheStrategy s) {
    switch (s) {
        case CacheStrategy::None: return "none";
        case CacheStrategy::Vanilla: return "vanilla";
        case CacheStrategy::Fused: return "fused";
    }
    return "?";
}

CacheStrategy cache_strategy_from_string(const std::string& s) {
    if (s == "none") return CacheStrategy::None;
    if (s == "vanilla") return CacheStrategy::Vanilla;
    if (s == "fused") return CacheStrategy::Fused;
    throw ConfigError("unknown cache strategy: " + s);
}

DenoiserOutput forward(const ModelParams& params, const std::vector<int>& tokens,
                       const std::vector<int>& positions, const std::vector<uint8_t>& attn,
                       BlockKVCache* cache, const std::vector<uint8_t>& cache_write,
                       FlopsLedger* ledger, PassKind kind) {
    const ModelConfig& cfg = params.config;
    const int64_t q = static_cast<int64_t>(tokens.size());
    const int64_t c = cache ? cache->cached_len : 0;
    const int64_t w = c + q;
    const int64_t d = cfg.d_model;
    const int64_t dh = cfg.head_dim();
    const int64_t f = static_cast<int64_t>(cfg.ffn_mult) * d;
    if (positions.size() != tokens.size()) throw DimError("forward: positions/tokens mismatch");
    if (static_cast<int64_t>(attn.size()) != q * w)
        throw DimError("forward: attn matrix must be q x (c+q)");
    if (!cache_write.empty() && static_cast<int64_t>(cache_write.size()) != q)
        throw DimError("forward: cache_write must have one flag per chunk token");
    for (int64_t i = 0; i < q; ++i) {
        if (tokens[static_cast<size_t>(i)] < 0 || tokens[static_cast<size_t>(i)] >= cfg.vocab_size)
            throw RangeError("forward: token id out of range");
        if (positions[static_cast<size_t>(i)] < 0 ||
            positions[static_cast<size_t>(i)] >= cfg.max_positions)
            throw RangeError("forward: position id " +
                             std::to_string(positions[static_cast<size_t>(i)]) +
                             " >= max_positions " + std::to_string(cfg.max_positions));
    }
    std::vector<int64_t> row_len(static_cast<size_t>(q), 0);
    for (int64_t i = 0; i < q; ++i) {
        int64_t n = 0;
        const uint8_t* row = attn.data() + i * w;
        for (int64_t j = 0; j < w; ++j) n += row[j] ? 1 : 0;
        if (n == 0) throw LayoutError("forward: attention row " + std::to_string(i) + " is all-false");
        row_len[static_cast<size_t>(i)] = n;
    }

    int64_t madds = 0;
    // x = token embedding + position embedding
    std::vector<double> x(static_cast<size_t>(q * d));
    for (int64_t i = 0; i < q; ++i) {
        const double* te = params.tok_emb.row_ptr(tokens[static_cast<size_t>(i)]);
        const double* pe = params.pos_emb.row_ptr(positions[static_cast<size_t>(i)]);
        double* xr = x.data() + i * d;
        for (int64_t j = 0; j < d; ++j) xr[j] = te[j] + pe[j];
    }

    std::vector<double> z(static_cast<size_t>(q * d)), Q(static_cast<size_t>(q * d)),
        K(static_cast<size_t>(q * d)), V(static_cast<size_t>(q * d)),
        cat(static_cast<size_t>(q * d)), attn_out(static_cast<size_t>(q * d)),
        h1(static_cast<size_t>(q * f)), h2(static_cast<size_t>(q * d));
    std::vector<double> scores(static_cast<size_t>(w)), probs(static_cast<size_t>(w));
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    const int n_write = cache_write.empty()
                            ? 0
                            : static_cast<int>(std::count(cache_write.begin(), cache_write.end(),
                                                          static_cast<uint8_t>(1)));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& L = params.layers[static_cast<size_t>(l)];
        for (int64_t i = 0; i < q; ++i)
            kernels::layer_norm_row(x.data() + i * d, d, L.ln1_g.data.data(), L.ln1_b.data.data(),
                                    z.data() + i * d);
        kernels::linear(z.data(), q, d, L.wq.data.data(), L.bq.data.data(), d, Q.data());
        kernels::linear(z.data(), q, d, L.wk.data.data(), L.bk.data.data(), d, K.data());
        kernels::linear(z.data(), q, d, L.wv.data.data(), L.bv.data.data(), d, V.data());
        madds += q * 3 * d * d;

        const std::vector<double>& ck = cache ? cache->k[static_cast<size_t>(l)] : K;
        const std::vector<double>& cv = cache ? cache->v[static_cast<size_t>(l)] : V;
        for (int64_t i = 0; i < q; ++i) {
            const uint8_t* row = attn.data() + i * w;
            double* cat_row = cat.data() + i * d;
            for (int h = 0; h < cfg.n_heads; ++h) {
                const double* qh = Q.data() + i * d + h * dh;
                for (int64_t j = 0; j < w; ++j) {
                    if (!row[j]) continue;
                    const double* kh = j < c ? ck.data() + j * d + h * dh
                                             : K.data() + (j - c) * d + h * dh;
                    scores[static_cast<size_t>(j)] = kernels::dot(qh, kh, dh) * inv_sqrt_dh;
                    madds += dh;
                }
                kernels::softmax_masked_row(scores.data(), row, w, probs.data());
                double* out = cat_row + h * dh;
                std::memset(out, 0, static_cast<size_t>(dh) * sizeof(double));
                for (int64_t j = 0; j < w; ++j) {
                    if (!row[j]) continue;
                    const double* vh = j < c ? cv.data() + j * d + h * dh
                                             : V.data() + (j - c) * d + h * dh;
                    kernels::axpy(probs[static_cast<size_t>(j)], vh, dh, out);
                    madds += dh;
                }
            }
        }
        kernels::linear(cat.data(), q, d, L.wo.data.data(), L.bo.data.data(), d, attn_out.data());
        madds += q * d * d;
        for (int64_t i = 0; i < q * d; ++i) x[static_cast<size_t>(i)] += attn_out[static_cast<size_t>(i)];

        for (int64_t i = 0; i < q; ++i)
            kernels::layer_norm_row(x.data() + i * d, d, L.ln2_g.data.data(), L.ln2_b.data.data(),
                                    z.data() + i * d);
        kernels::linear(z.data(), q, d, L.w_in.data.data(), L.b_in.data.data(), f, h1.data());
        for (int64_t i = 0; i < q * f; ++i) h1[static_cast<size_t>(i)] = kernels::gelu(h1[static_cast<size_t>(i)]);
        kernels::linear(h1.data(), q, f, L.w_out.data.data(), L.b_out.data.data(), d, h2.data());
        madds += q * 2 * f * d;
        for (int64_t i = 0; i < q * d; ++i) x[static_cast<size_t>(i)] += h2[static_cast<size_t>(i)];

        if (cache && n_write > 0) {
            std::vector<double>& dk = cache->k[static_cast<size_t>(l)];
            std::vector<double>& dv = cache->v[static_cast<size_t>(l)];
            for (int64_t i = 0; i < q; ++i) {
                if (!cache_write[static_cast<size_t>(i)]) continue;
                dk.insert(dk.end(), K.begin() + i * d, K.begin() + (i + 1) * d);
                dv.insert(dv.end(), V.begin() + i * d, V.begin() + (i + 1) * d);
            }
        }
    }
    if (cache) cache->cached_len += n_write;

    DenoiserOutput out;
    out.logits = Tensor::zeros({q, cfg.vocab_size});
    for (int64_t i = 0; i < q; ++i) {
        kernels::layer_norm_row(x.data() + i * d, d, params.lnf_g.data.data(),
                                params.lnf_b.data.data(), z.data() + i * d);
    }
    kernels::linear(z.data(), q, d, params.lm_w.data.data(), params.lm_b.data.data(),
                    cfg.vocab_size, out.logits.data.data());

    if (ledger) {
        if (kind == PassKind::Prefill) {
            ledger->prefill_passes += 1;
            ledger->prefill_multiply_adds += madds;
        } else {
            ledger->forward_passes += 1;
            ledger->multiply_adds += madds;
            const FlopsModel fm = cfg.flops_model();
            // one record per run of rows sharing a context length
            int64_t run_start = 0;
            for (int64_t i = 1; i <= q; ++i) {
                if (i == q || row_len[static_cast<size_t>(i)] != row_len[static_cast<size_t>(run_start)]) {
                    const int64_t ell = row_len[static_cast<size_t>(run_start)];
                    ledger->records.push_back(PassRecord{ledger->forward_passes - 1, i - run_start,
                                                         ell, fm.pass_flops(i - run_start, ell)});
                    run_start = i;
                }
            }
        }
    }
    return out;
}

ParamNodes register_params(Tape& tape, const ModelParams& params) {
    ParamNodes n;
    n.tok_emb = tape.leaf(params.tok_emb);
    n.pos_emb = tape.leaf(params.pos_emb);
    for (const LayerParams& L : params.layers) {
        ParamNodes::Layer nl;
        nl.ln1_g = tape.leaf(L.ln1_g);
        nl.ln1_b = tape.leaf(L.ln1_b);
        nl.wq = tape.leaf(L.wq);
        nl.bq = tape.leaf(L.bq);
        nl.wk = tape.leaf(L.wk);
        nl.bk = tape.leaf(L.bk);
        nl.wv = tape.leaf(L.wv);
        nl.bv = tape.leaf(L.bv);
        nl.wo = tape.leaf(L.wo);
        nl.bo = tape.leaf(L.bo);
        nl.ln2_g = tape.leaf(L.ln2_g);
        nl.ln2_b = tape.leaf(L.ln2_b);
        nl.w_in = tape.leaf(L.w_in);
        nl.b_in = tape.leaf(L.b_in);
        nl.w_out = tape.leaf(L.w_out);
        nl.b_out = tape.leaf(L.b_out);
        n.layers.push_back(nl);
    }
    n.lnf_g = tape.leaf(params.lnf_g);
    n.lnf_b = tape.leaf(params.lnf_b);
    n.lm_w = tape.leaf(params.lm_w);
    n.lm_b = tape.leaf(params.lm_b);
    return n;
}

Tape::NodeId forward_train(Tape& tape, const ParamNodes& nodes, const ModelConfig& cfg,
                           const std::vector<int>& tokens, const std::vector<int>& positions,
                           const std::vector<uint8_t>& attn) {
    const int64_t q = static_cast<int64_t>(tokens.size());
    const int64_t d = cfg.d_model;
    const int64_t dh = cfg.head_dim();
    if (static_cast<int64_t>(attn.size()) != q * q)
        throw DimError("forward_train: attn must be q x q");
    for (size_t i = 0; i < positions.size(); ++i)
        if (positions[i] < 0 || positions[i] >= cfg.max_positions)
            throw RangeError("forward_train: position id out of range");

    Tape::NodeId x = tape.add(tape.embed(nodes.tok_emb, tokens),
                              tape.embed(nodes.pos_emb, positions));
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const ParamNodes::Layer& L = nodes.layers[static_cast<size_t>(l)];
        Tape::NodeId z = tape.layer_norm(x, L.ln1_g, L.ln1_b);
        Tape::NodeId Q = tape.linear(z, L.wq, L.bq);
        Tape::NodeId K = tape.linear(z, L.wk, L.bk);
        Tape::NodeId V = tape.linear(z, L.wv, L.bv);
        std::vector<Tape::NodeId> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            Tape::NodeId qh = tape.slice_cols(Q, h * dh, dh);
            Tape::NodeId kh = tape.slice_cols(K, h * dh, dh);
            Tape::NodeId vh = tape.slice_cols(V, h * dh, dh);
            Tape::NodeId sc = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
            Tape::NodeId pr = tape.softmax_rows_masked(sc, attn);
            heads.push_back(tape.matmul(pr, vh));
        }
        Tape::NodeId cat = cfg.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
        x = tape.add(x, tape.linear(cat, L.wo, L.bo));
        Tape::NodeId z2 = tape.layer_norm(x, L.ln2_g, L.ln2_b);
        Tape::NodeId ff = tape.linear(tape.gelu(tape.linear(z2, L.w_in, L.b_in)), L.w_out,
                                      L.b_out);
        x = tape.add(x, ff);
    }
    Tape::NodeId y = tape.layer_norm(x, nodes.lnf_g, nodes.lnf_b);
    return tape.linear(y, nodes.lm_w, nodes.lm_b);
}

void accumulate_grads(const Tape& tape, const ParamNodes& nodes, ModelParams& grads) {
    std::vector<Tape::NodeId> order;
    order.push_back(nodes.tok_emb);
    order.push_back(nodes.pos_emb);
    for (const ParamNodes::Layer& L : nodes.layers)
        for (Tape::NodeId id : {L.ln1_g, L.ln1_b, L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo,
                                L.ln2_g, L.ln2_b, L.w_in, L.b_in, L.w_out, L.b_out})
            order.push_back(id);
    order.push_back(nodes.lnf_g);
    order.push_back(nodes.lnf_b);
    order.push_back(nodes.lm_w);
    order.push_back(nodes.lm_b);
    size_t i = 0;
    grads.for_each_named([&](const std::string&, Tensor& g) {
        const Tensor& src = tape.grad(order[i++]);
        if (!src.data.empty())
            for (size_t j = 0; j < g.data.size(); ++j) g.data[j] += src.data[j];
    });
}

}  // namespace blockdiff
