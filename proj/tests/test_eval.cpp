/*
 * Copyright 2026 The srwm-acl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srwm/eval.hpp"

#include "test_util.hpp"

#include <map>
#include <set>
#include <sstream>

using namespace srwm;

namespace {

ModelConfig tiny_model(std::size_t n_outputs = 5, std::size_t dim = 8) {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = 2;
    c.input_dim = dim;
    c.n_outputs = n_outputs;
    c.seed = 31;
    return c;
}

std::shared_ptr<SynthFamily> family(std::uint64_t seed, const std::string& name) {
    SynthSpec s;
    s.name = name;
    s.dim = 8;
    s.num_classes = 12;
    s.seed = seed;
    return std::make_shared<SynthFamily>(s);
}

std::shared_ptr<Dataset> grid_dataset(std::size_t classes, std::size_t per_class) {
    auto d = std::make_shared<Dataset>(8);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<Real> x(8);
            for (Real& v : x) v = static_cast<Real>(n(rng));
            d->add(x, static_cast<int>(c));
        }
    return d;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        out.push_back(f);
    }
    return out;
}

}  // namespace

TEST_CASE("metric formulas") {
    const AccuracyMatrix one{{Real(0.7)}};
    CHECK(average_accuracy(one) == doctest::Approx(0.7));
    CHECK_FALSE(backward_transfer(one).has_value());
    CHECK_FALSE(forward_transfer(one, {Real(0.5)}).has_value());

    const AccuracyMatrix two{{Real(0.9)}, {Real(0.5), Real(0.8)}};
    CHECK(average_accuracy(two) == doctest::Approx(0.65));
    CHECK(*backward_transfer(two) == doctest::Approx(-0.4));
    CHECK(*forward_transfer(two, {Real(0.7), Real(0.6)}) == doctest::Approx(0.2));
    CHECK_FALSE(forward_transfer(two, {}).has_value());

    const AccuracyMatrix three{{Real(1)}, {Real(0.6), Real(0.9)}, {Real(0.4), Real(0.7), Real(0.8)}};
    CHECK(average_accuracy(three) == doctest::Approx((0.4 + 0.7 + 0.8) / 3));
    CHECK(*backward_transfer(three) == doctest::Approx(((0.4 - 1) + (0.7 - 0.9)) / 2));
    CHECK(*forward_transfer(three, {Real(0.5), Real(0.5), Real(0.9)}) == doctest::Approx(((0.9 - 0.5) + (0.8 - 0.9)) / 2));

    SequenceCounts c;
    c.correct = {{3, 0}, {1, 2}};
    c.total = {{4, 0}, {4, 8}};
    const AccuracyMatrix a = to_accuracy(c);
    REQUIRE(a.size() == 2);
    CHECK(a[0].size() == 1);
    CHECK(a[0][0] == doctest::Approx(0.75));
    CHECK(a[1][0] == doctest::Approx(0.25));
    CHECK(a[1][1] == doctest::Approx(0.25));
}

TEST_CASE("evaluate_sequence matches an independent replay") {
    const ModelParams p = init_model(tiny_model());
    Rng rng(1);
    const auto a = family(1, "A"), b = family(2, "B");
    const CLSequence seq = build_cl_sequence({sample_episode(*a, 5, 3, 2, rng), sample_episode(*b, 5, 3, 2, rng)});
    const SequenceCounts c = evaluate_sequence(p, seq);
    Tape t(Tape::Mode::Inference);
    ModelState s = start_state(t, p);
    for (std::size_t m = 0; m < 2; ++m) {
        for (const auto& in : seq.episodes[m].demo_inputs()) model_step(t, p, s, in);
        for (std::size_t j = 0; j <= m; ++j) {
            std::size_t correct = 0;
            for (const Example& q : seq.episodes[j].queries) {
                const auto pr = predict(t, p, s, q.x);
                correct += static_cast<std::size_t>(std::max_element(pr.begin(), pr.end()) - pr.begin()) == q.label;
            }
            CHECK(c.correct[m][j] == correct);
            CHECK(c.total[m][j] == 10);
        }
    }
    const SequenceCounts again = evaluate_sequence(p, seq);
    CHECK(again.correct == c.correct);
    const SequenceCounts capped = evaluate_sequence(p, seq, 3);
    CHECK(capped.total[1][0] == 3);
}

TEST_CASE("untrained model scores at chance") {
    const ModelParams p = init_model(tiny_model());
    MetaTestProtocol proto;
    proto.k_shot = 2;
    proto.n_runs = 1;
    proto.episodes_per_run = 300;
    proto.queries_per_class = 2;
    proto.baselines = false;
    const MetaTestResult r = meta_test(p, {{family(1, "A"), nullptr}}, proto);
    // 3000 queries; 5 standard errors around 1/5.
    CHECK(std::abs(r.mean.acc[0][0] - 0.2) < 5 * std::sqrt(0.2 * 0.8 / 3000));
    CHECK(r.summary["backward_transfer"].is_null());
    CHECK(to_json(r.mean)["backward_transfer"].is_null());
}

TEST_CASE("meta_test runs, summary and purity") {
    const ModelParams p = init_model(tiny_model());
    const auto before = clone_params(p);
    MetaTestProtocol proto;
    proto.k_shot = 2;
    proto.n_runs = 4;
    proto.episodes_per_run = 10;
    proto.seed = 3;
    const std::vector<TaskSlot> tasks{{family(1, "A"), nullptr}, {family(2, "B"), nullptr}};
    const MetaTestResult r = meta_test(p, tasks, proto);
    REQUIRE(r.runs.size() == 4);
    double mean = 0;
    for (const auto& run : r.runs) {
        mean += run.avg_acc / 4;
        CHECK(run.backward_transfer.has_value());
        CHECK(run.forward_transfer.has_value());
        CHECK(run.baseline.size() == 2);
        CHECK(run.baseline[0] == run.acc[0][0]);
    }
    double var = 0;
    for (const auto& run : r.runs) var += (run.avg_acc - mean) * (run.avg_acc - mean) / 3;
    CHECK(r.summary["avg_acc"]["mean"].get<double>() == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.summary["avg_acc"]["std"].get<double>() == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
    CHECK(r.summary["avg_acc"]["n"] == 4);
    CHECK(r.mean.avg_acc == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.runs[0].meta["seed"] != r.runs[1].meta["seed"]);

    const MetaTestResult again = meta_test(p, tasks, proto);
    for (std::size_t i = 0; i < 4; ++i) CHECK(again.runs[i].acc == r.runs[i].acc);
    const auto pn = p.named(), bn = before.named();
    for (std::size_t i = 0; i < pn.size(); ++i) CHECK(bitwise_equal(*pn[i].second, *bn[i].second));

    std::ostringstream csv;
    write_accuracy_csv(csv, r.mean);
    const auto rows = csv_rows(csv.str());
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == std::vector<std::string>{"boundary", "task", "accuracy"});
    CHECK(rows[2][0] == "2");
    CHECK(rows[2][1] == "1");
}

TEST_CASE("meta_test configuration errors") {
    MetaTestProtocol proto;
    proto.n_runs = 1;
    proto.episodes_per_run = 1;
    const std::vector<TaskSlot> two{{family(1, "A"), nullptr}, {family(2, "B"), nullptr}};
    proto.mode = LabelMode::Class;
    CHECK_THROWS_AS(meta_test(init_model(tiny_model(5)), two, proto), ConfigError);
    CHECK_NOTHROW(meta_test(init_model(tiny_model(10)), two, proto));
    proto.mode = LabelMode::Domain;
    CHECK_THROWS_AS(meta_test(init_model(tiny_model(10)), two, proto), ConfigError);
    CHECK_THROWS_AS(meta_test(init_model(tiny_model(5, 9)), two, proto), ConfigError);
    CHECK_THROWS_AS(meta_test(init_model(tiny_model(5)), {}, proto), ConfigError);
    proto.kind = Protocol::Fixed;
    CHECK_THROWS_AS(meta_test(init_model(tiny_model(5)), two, proto), ConfigError);
    proto.kind = Protocol::Episodic;
    proto.n_runs = 0;
    CHECK_THROWS_AS(meta_test(init_model(tiny_model(5)), two, proto), ConfigError);
}

TEST_CASE("fixed protocol scores every held-out item") {
    const auto train = grid_dataset(4, 6), test = grid_dataset(4, 5);
    const auto tr0 = std::make_shared<DatasetSource>("t0", train, std::vector<int>{0, 1});
    const auto tr1 = std::make_shared<DatasetSource>("t1", train, std::vector<int>{2, 3});
    const auto te0 = std::make_shared<DatasetSource>("t0", test, std::vector<int>{0, 1});
    const auto te1 = std::make_shared<DatasetSource>("t1", test, std::vector<int>{2, 3});
    MetaTestProtocol proto;
    proto.kind = Protocol::Fixed;
    proto.n_way = 2;
    proto.k_shot = 3;
    proto.n_runs = 3;
    proto.mode = LabelMode::Class;
    const MetaTestResult r = meta_test(init_model(tiny_model(4)), {{tr0, te0}, {tr1, te1}}, proto);
    for (const auto& run : r.runs) {
        const auto q = run.meta["queries"];
        CHECK(q[0][0] == 10);
        CHECK(q[1][0] == 10);
        CHECK(q[1][1] == 10);
        CHECK(run.meta["protocol"] == "fixed");
    }
    const MetaTestResult held = meta_test(init_model(tiny_model(4)), {{tr0, nullptr}, {tr1, nullptr}}, proto);
    CHECK(held.runs[0].meta["queries"][1][1] == 6);
}

TEST_CASE("curve extraction") {
    const std::string log =
        "step,lr,boundary,task,source,kind,value\n"
        "10,0.1,1,1,A,learn,2.0\n"
        "10,0.1,2,2,B,learn,1.0\n"
        "10,0.1,2,1,A,bwd,1.5\n"
        "10,0.1,0,0,batch,total,9\n"
        "10,0.1,0,0,batch,grad_norm,9\n"
        "20,0.1,1,1,B,learn,0.5\n"
        "20,0.1,2,2,A,learn,0.25\n"
        "20,0.1,2,1,B,bwd_monitor,0.75\n"
        "30,0.1,1,1,A,learn,1.0\n"
        "30,0.1,1,1,A,learn,3.0\n"
        "40,,0,0,validation,val_acc,0.5\n";
    std::istringstream in(log);
    const CurveSet c = curve_extract(in);
    const std::set<std::string> names{"learn/A/1", "learn/B/2", "bwd/A/1", "learn/B/1", "learn/A/2", "bwd/B/1"};
    std::set<std::string> got;
    for (const auto& [n, _] : c.series) got.insert(n);
    CHECK(got == names);
    CHECK(c.series.at("learn/A/1").at(10) == doctest::Approx(2.0));
    CHECK(c.series.at("learn/A/1").at(30) == doctest::Approx(2.0));
    CHECK(c.series.at("bwd/B/1").at(20) == doctest::Approx(0.75));

    std::ostringstream os;
    write_curves_csv(os, c);
    const auto rows = csv_rows(os.str());
    CHECK(rows[0] == std::vector<std::string>{"series", "step", "value"});
    CHECK(rows.size() == 8);

    std::istringstream empty("");
    CHECK(curve_extract(empty).series.empty());
    std::istringstream header_only("step,lr,boundary,task,source,kind,value\n");
    CHECK(curve_extract(header_only).series.empty());
    std::istringstream short_line("step,lr,boundary,task,source,kind,value\n10,0.1,1\n");
    CHECK_THROWS_AS(curve_extract(short_line), FormatError);
    std::istringstream bad_number("step,lr,boundary,task,source,kind,value\n10,0.1,1,1,A,learn,abc\n");
    CHECK_THROWS_AS(curve_extract(bad_number), FormatError);
    std::istringstream no_kind("step,value\n1,2\n");
    CHECK_THROWS_AS(curve_extract(no_kind), FormatError);
}

TEST_CASE("weight snapshots") {
    const ModelParams p = init_model(tiny_model());
    Rng rng(4);
    const auto a = family(1, "A");
    const CLSequence seq = build_cl_sequence({sample_episode(*a, 5, 2, 1, rng)});
    const auto demos = seq.demo_stream();
    REQUIRE(demos.size() == 10);

    SUBCASE("full dump") {
        std::ostringstream os;
        CHECK(dump_weight_snapshots(p, demos, 4, {}, os) == 3);  // steps 0, 4, 8
        const auto rows = csv_rows(os.str());
        CHECK(rows[0] == std::vector<std::string>{"step", "layer", "head", "block", "row", "col", "value"});
        // 2 layers x 2 heads x (8 + 8 + 8 + 4 rows) x 8 columns per dump.
        CHECK(rows.size() == 1 + 3 * 2 * 2 * 28 * 8);
        std::set<std::string> steps;
        for (std::size_t i = 1; i < rows.size(); ++i) steps.insert(rows[i][0]);
        CHECK(steps == std::set<std::string>{"0", "4", "8"});
    }
    SUBCASE("selection and values") {
        std::ostringstream os;
        SnapshotSelection sel;
        sel.layers = {1};
        sel.heads = {0};
        sel.blocks = {SrwmBlock::Rate};
        CHECK(dump_weight_snapshots(p, demos, 10, sel, os) == 2);
        const auto rows = csv_rows(os.str());
        REQUIRE(rows.size() == 1 + 2 * 4 * 8);
        // Oracle: W0 rows for step 0, replayed state for step 10.
        const SrwmDims& dims = p.blocks[1].srwm.dims;
        const auto [r0, r1] = dims.block_rows(SrwmBlock::Rate);
        Tape t(Tape::Mode::Inference);
        ModelState s = start_state(t, p);
        for (const auto& in : demos) model_step(t, p, s, in);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(rows[i][1] == "1");
            CHECK(rows[i][2] == "0");
            CHECK(rows[i][3] == "beta");
            const std::size_t r = r0 + std::stoul(rows[i][4]), col = std::stoul(rows[i][5]);
            REQUIRE(r < r1);
            const Tensor& w = rows[i][0] == "0" ? p.blocks[1].srwm.heads[0] : s.layers[1].heads[0].value();
            CHECK(std::stod(rows[i][6]) == w.at(r, col));
        }
    }
    SUBCASE("errors") {
        std::ostringstream os;
        CHECK_THROWS_AS(dump_weight_snapshots(p, demos, 0, {}, os), ConfigError);
        SnapshotSelection sel;
        sel.heads = {2};
        CHECK_THROWS_AS(dump_weight_snapshots(p, demos, 1, sel, os), ConfigError);
        CHECK(srwm_block_from_string(to_string(SrwmBlock::Query)) == SrwmBlock::Query);
        CHECK_THROWS_AS(srwm_block_from_string("v"), ConfigError);
    }
}
