#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "blockdiff/analysis.hpp"
#include "blockdiff/decoding.hpp"
#include "blockdiff/metrics.hpp"
#include "blockdiff/pipeline.hpp"

namespace py = pybind11;
using namespace blockdiff;

namespace {

DecodeConfig make_decode_config(const std::string& mode, int block_size, int max_blocks,
                                double tau, const std::string& strategy) {
    DecodeConfig cfg;
    cfg.mode = decode_mode_from_string(mode);
    cfg.block_size = block_size;
    cfg.max_blocks = max_blocks;
    cfg.tau = tau;
    cfg.strategy = cache_strategy_from_string(strategy);
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "block-diffusion language model lab (C++ core)";

    py::register_exception<Error>(m, "BlockdiffError");

    py::class_<Vocabulary>(m, "Vocabulary")
        .def(py::init<>())
        .def_readwrite("symbols", &Vocabulary::symbols)
        .def_readonly("mask_id", &Vocabulary::mask_id)
        .def_readonly("eos_id", &Vocabulary::eos_id)
        .def_readonly("pad_id", &Vocabulary::pad_id)
        .def("size", &Vocabulary::size)
        .def("id_of", &Vocabulary::id_of)
        .def("symbol", &Vocabulary::symbol);

    py::class_<ReportGrammar>(m, "ReportGrammar")
        .def_property_readonly("n_regions", &ReportGrammar::n_regions)
        .def_readwrite("abnormal_prob", &ReportGrammar::abnormal_prob);

    py::class_<ReportRecord>(m, "ReportRecord")
        .def_readonly("context_tokens", &ReportRecord::context_tokens)
        .def_readonly("response_tokens", &ReportRecord::response_tokens)
        .def_readonly("labels", &ReportRecord::labels)
        .def_readonly("normalized", &ReportRecord::normalized);

    m.def("default_grammar", &default_grammar);
    m.def("build_vocabulary", &build_vocabulary);
    m.def("generate_sample", &generate_sample, py::arg("grammar"), py::arg("vocab"),
          py::arg("seed"), py::arg("normalized"));
    m.def("normalize_report", &normalize_report);
    m.def("make_corpus", &make_corpus, py::arg("grammar"), py::arg("vocab"), py::arg("seed"),
          py::arg("count"), py::arg("normalized"), py::arg("stream_offset") = 0);
    m.def("write_dataset", &write_dataset);
    m.def("read_dataset", &read_dataset);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("ffn_mult", &ModelConfig::ffn_mult)
        .def_readwrite("max_positions", &ModelConfig::max_positions);

    py::class_<ModelParams>(m, "ModelParams")
        .def_property_readonly("config", [](const ModelParams& p) { return p.config; });

    m.def("init_params", &init_params, py::arg("config"), py::arg("seed"));
    m.def("save_checkpoint", &save_checkpoint);
    m.def("load_checkpoint", &load_checkpoint);

    py::class_<FlopsLedger>(m, "FlopsLedger")
        .def_readonly("forward_passes", &FlopsLedger::forward_passes)
        .def_readonly("multiply_adds", &FlopsLedger::multiply_adds);

    py::class_<DecodeResult>(m, "DecodeResult")
        .def_readonly("tokens", &DecodeResult::tokens)
        .def_readonly("blocks_generated", &DecodeResult::blocks_generated)
        .def_readonly("decoded_tokens", &DecodeResult::decoded_tokens)
        .def_readonly("terminated", &DecodeResult::terminated)
        .def_readonly("ledger", &DecodeResult::ledger);

    m.def(
        "decode",
        [](const ModelParams& params, const std::vector<int>& context, const Vocabulary& vocab,
           const std::string& mode, int block_size, int max_blocks, double tau,
           const std::string& strategy) {
            return decode(params, context,
                          make_decode_config(mode, block_size, max_blocks, tau, strategy), vocab);
        },
        py::arg("params"), py::arg("context"), py::arg("vocab"), py::arg("mode") = "multistep",
        py::arg("block_size") = 8, py::arg("max_blocks") = 4, py::arg("tau") = 0.9,
        py::arg("strategy") = "fused");

    py::class_<FlopsModel>(m, "FlopsModel")
        .def(py::init([](int d_model, int n_layers, int ffn_mult) {
                 return FlopsModel{d_model, n_layers, ffn_mult};
             }),
             py::arg("d_model"), py::arg("n_layers"), py::arg("ffn_mult"))
        .def("g", &FlopsModel::g)
        .def("pass_flops", &FlopsModel::pass_flops);

    py::class_<RadSavings>(m, "RadSavings")
        .def_readonly("rad_flops", &RadSavings::rad_flops)
        .def_readonly("full_duplication_flops", &RadSavings::full_duplication_flops)
        .def_readonly("saved_fraction", &RadSavings::saved_fraction);

    m.def("rad_savings", &rad_savings, py::arg("model"), py::arg("context_len"),
          py::arg("response_len"), py::arg("block_size"));

    m.def("rouge_l", &rouge_l);
    py::class_<FindingScore>(m, "FindingScore")
        .def_readonly("precision", &FindingScore::precision)
        .def_readonly("recall", &FindingScore::recall)
        .def_readonly("f1", &FindingScore::f1)
        .def_readonly("false_positive_rate", &FindingScore::false_positive_rate)
        .def_readonly("false_negative_rate", &FindingScore::false_negative_rate)
        .def_readonly("garbage_fraction", &FindingScore::garbage_fraction);
    m.def("finding_f1", &finding_f1, py::arg("response"), py::arg("gold_labels"),
          py::arg("grammar"), py::arg("vocab"));

    py::class_<JointDistribution>(m, "JointDistribution")
        .def_readonly("alphabet", &JointDistribution::alphabet)
        .def_readonly("length", &JointDistribution::length)
        .def_readonly("probs", &JointDistribution::probs)
        .def_static("product", &JointDistribution::product)
        .def_static("correlated_copy", &JointDistribution::correlated_copy)
        .def_static("parity", &JointDistribution::parity);

    m.def(
        "mean_field_bias",
        [](const JointDistribution& q, const std::vector<int>& xt) {
            return mean_field_bias(q, MaskedSequence{xt});
        },
        py::arg("q"), py::arg("xt"), "xt uses -1 for masked positions");
    m.def("bias_curve", &bias_curve);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("grad_clip", &TrainConfig::grad_clip);

    m.def(
        "train_ar",
        [](const std::vector<ReportRecord>& records, const Vocabulary& vocab,
           const ModelConfig& mc, const TrainConfig& tc) {
            return train_ar_stage(records, vocab, mc, tc);
        },
        py::arg("records"), py::arg("vocab"), py::arg("model_config"), py::arg("train_config"));
    m.def(
        "adapt_rad",
        [](const ModelParams& init, const std::vector<ReportRecord>& records,
           const Vocabulary& vocab, int block_size, const TrainConfig& tc) {
            return adapt_rad_stage(init, records, vocab, block_size, tc);
        },
        py::arg("init"), py::arg("records"), py::arg("vocab"), py::arg("block_size"),
        py::arg("train_config"));
}
