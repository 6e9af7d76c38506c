#include "embfuse/error.hpp"
#include "embfuse/retrieval.hpp"
#include "synthetic.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace embfuse;
using embfuse::testing::code_of;
using embfuse::testing::numbered;
using embfuse::testing::planted_task;
using embfuse::testing::random_matrix;
using embfuse::testing::reference_ndcg;

namespace {

RunFile ranked(const std::string& q, const std::vector<std::string>& docs) {
    RunFile run;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        run.entries.push_back({q, docs[i], static_cast<int>(i + 1), 1.0 - 0.1 * double(i), "t"});
    }
    return run;
}

}  // namespace

TEST_CASE("search orders by score") {
    // Unit query along x; docs at cosines 0.9, 0.2, 0.5.
    EmbeddingMatrix q(1, 2, {1, 0});
    EmbeddingMatrix d(3, 2, {0.9f, std::sqrt(1 - 0.81f), 0.2f, std::sqrt(1 - 0.04f), 0.5f, std::sqrt(0.75f)});
    const CosineScorer scorer(q, d);
    const auto run = search({"q"}, {"a", "b", "c"}, scorer, 2);
    REQUIRE(run.entries.size() == 2);
    CHECK(run.entries[0].doc_id == "a");
    CHECK(run.entries[0].rank == 1);
    CHECK(run.entries[1].doc_id == "c");
    CHECK(run.entries[1].rank == 2);
    CHECK(run.entries[0].score == doctest::Approx(0.9));
    validate_run(run);
}

TEST_CASE("ties break by doc id") {
    EmbeddingMatrix q(1, 2, {1, 0});
    EmbeddingMatrix d(3, 2, {1, 0, 1, 0, 0, 1});
    const CosineScorer scorer(q, d);
    const auto run = search({"q"}, {"zeta", "alpha", "mid"}, scorer, 3);
    CHECK(run.entries[0].doc_id == "alpha");
    CHECK(run.entries[1].doc_id == "zeta");
    CHECK(run.entries[2].doc_id == "mid");
    CHECK(search({"q"}, {"zeta", "alpha", "mid"}, scorer, 3) == run);
}

TEST_CASE("parallel and serial search agree") {
    const auto docs = random_matrix(300, 16, 1);
    const auto queries = random_matrix(57, 16, 2);
    const CosineScorer scorer(queries, docs);
    const auto qids = numbered("q", 57);
    const auto dids = numbered("d", 300);
    const auto serial = search(qids, dids, scorer, 10, "t", 1);
    CHECK(format_run(search(qids, dids, scorer, 10, "t", 7)) == format_run(serial));
    CHECK(serial.entries.size() == 570);
}

TEST_CASE("k beyond the collection returns every doc") {
    const CosineScorer scorer(random_matrix(2, 3, 1), random_matrix(4, 3, 2));
    CHECK(search({"a", "b"}, numbered("d", 4), scorer, 10).entries.size() == 8);
}

TEST_CASE("search errors") {
    EmbeddingMatrix q(1, 2, {0, 0});
    const CosineScorer zero(q, random_matrix(2, 2, 1));
    CHECK(code_of([&] { search({"q7"}, {"a", "b"}, zero, 1); }) == ErrorCode::UndefinedSimilarity);
    try {
        search({"q7"}, {"a", "b"}, zero, 1);
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("q7") != std::string::npos);
    }
    const CosineScorer ok(random_matrix(1, 2, 1), random_matrix(2, 2, 2));
    CHECK(code_of([&] { search({"q"}, {"a", "b"}, ok, 0); }) == ErrorCode::Validation);
    CHECK(code_of([&] { search({"q"}, {"a"}, ok, 1); }) == ErrorCode::Validation);
    CHECK(code_of([] { CosineScorer(random_matrix(1, 2, 1), random_matrix(2, 3, 2)); }) == ErrorCode::Dimension);
}

TEST_CASE("ndcg hand examples") {
    Qrels one{{{"q", "rel", 1}}};
    CHECK(ndcg_at_k(ranked("q", {"rel", "x"}), one, 10).mean == 1.0);
    const auto second = ndcg_at_k(ranked("q", {"x", "rel"}), one, 10);
    CHECK(std::abs(second.mean - 1.0 / std::log2(3.0)) < 1e-12);
    CHECK(std::abs(second.mean - 0.63093) < 1e-5);

    Qrels graded{{{"q", "a", 2}, {"q", "b", 1}}};
    CHECK(ndcg_at_k(ranked("q", {"a", "b"}), graded, 10).mean == doctest::Approx(1.0));
    CHECK(ndcg_at_k(ranked("q", {"b", "a"}), graded, 10).mean < 1.0);
    // Relevant doc below the cutoff earns nothing.
    CHECK(ndcg_at_k(ranked("q", {"x", "rel"}), one, 1).mean == 0.0);
}

TEST_CASE("ndcg gain modes") {
    Qrels graded{{{"q", "a", 3}, {"q", "b", 1}}};
    const auto run = ranked("q", {"b", "a"});
    const double linear = (1.0 + 3.0 / std::log2(3.0)) / (3.0 + 1.0 / std::log2(3.0));
    const double expo = (1.0 + 7.0 / std::log2(3.0)) / (7.0 + 1.0 / std::log2(3.0));
    CHECK(ndcg_at_k(run, graded, 10).mean == doctest::Approx(linear).epsilon(1e-12));
    CHECK(ndcg_at_k(run, graded, 10, GainMode::Exponential).mean == doctest::Approx(expo).epsilon(1e-12));
}

TEST_CASE("queries without relevant docs are excluded") {
    Qrels qrels{{{"q1", "a", 1}, {"q2", "a", 0}}};
    RunFile run = ranked("q1", {"b", "a"});
    for (const auto& e : ranked("q2", {"a"}).entries) run.entries.push_back(e);
    for (const auto& e : ranked("q3", {"a"}).entries) run.entries.push_back(e);
    const auto report = ndcg_at_k(run, qrels, 10);
    CHECK(report.per_query.size() == 1);
    CHECK(report.excluded == std::vector<std::string>{"q2", "q3"});
    CHECK(report.mean == doctest::Approx(1.0 / std::log2(3.0)));
    CHECK(code_of([&] { ndcg_at_k(run, Qrels{}, 10); }) == ErrorCode::Validation);
    CHECK(code_of([&] { ndcg_at_k(run, qrels, 0); }) == ErrorCode::Validation);
}

TEST_CASE("ndcg matches the reference on random runs") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Qrels qrels;
        RunFile run;
        const auto docs = numbered("d", 30);
        for (std::size_t q = 0; q < 20; ++q) {
            const std::string qid = "q" + std::to_string(q);
            for (const auto& d : docs) {
                if (rng.uniform() < 0.2) qrels.entries.push_back({qid, d, static_cast<int>(rng.below(4))});
            }
            std::vector<std::string> order = docs;
            rng.shuffle(std::span<std::string>(order));
            order.resize(10);
            for (const auto& e : ranked(qid, order).entries) run.entries.push_back(e);
        }
        for (bool expo : {false, true}) {
            const auto report = ndcg_at_k(run, qrels, 10, expo ? GainMode::Exponential : GainMode::Linear);
            const auto expected = reference_ndcg(run, qrels, 10, expo);
            REQUIRE(report.per_query.size() == expected.size());
            double mean = 0;
            for (const auto& [q, v] : report.per_query) {
                CHECK(std::abs(v - expected.at(q)) < 1e-10);
                CHECK(v >= 0.0);
                CHECK(v <= 1.0 + 1e-12);
                mean += expected.at(q);
            }
            CHECK(std::abs(report.mean - mean / double(expected.size())) < 1e-10);
        }
    }
}

TEST_CASE("ndcg depends only on ranks") {
    const auto task = planted_task(random_matrix(50, 8, 6), 20, 1.0, 7);
    const CosineScorer scorer(task.queries, task.docs);
    const auto run = search(task.query_ids, task.doc_ids, scorer, 10);
    RunFile shifted = run;
    for (auto& e : shifted.entries) e.score = std::exp(3 * e.score) + 5;
    CHECK(ndcg_at_k(shifted, task.qrels, 10).mean == ndcg_at_k(run, task.qrels, 10).mean);
}

TEST_CASE("planted task is solved by raw cosine") {
    const auto task = planted_task(random_matrix(200, 32, 8), 50, 0.01, 9);
    const auto report = evaluate_pipeline(task, {RawStage{}});
    CHECK(report.mean == 1.0);
    CHECK(report.per_query.size() == 50);
    CHECK(report.transform == "raw");
}

TEST_CASE("full-width truncation equals raw") {
    const auto task = planted_task(random_matrix(100, 12, 10), 30, 0.8, 11);
    const auto raw = run_pipeline(task, {RawStage{}});
    const auto cut = run_pipeline(task, {TruncateStage{12}});
    CHECK(cut.run == raw.run);
    CHECK(cut.report.per_query == raw.report.per_query);
    CHECK(cut.report.mean == raw.report.mean);
}

TEST_CASE("pipeline reports name the failing stage") {
    const auto task = planted_task(random_matrix(20, 6, 12), 5, 0.1, 13);
    try {
        run_pipeline(task, {RawStage{}, TruncateStage{9}});
        FAIL("expected a dimension error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Dimension);
        CHECK(std::string(e.what()).find("stage 2") != std::string::npos);
    }
    auto proj = std::make_shared<const LshProjector>(6, 64, 1);
    CHECK(code_of([&] { run_pipeline(task, {LshStage{proj}, RawStage{}}); }) == ErrorCode::Validation);
    auto model = std::make_shared<const DecoderModel>(make_decoder(5, 4, {4}));
    CHECK(code_of([&] { run_pipeline(task, {DecoderStage{model, std::nullopt}}); }) == ErrorCode::Dimension);
}

TEST_CASE("lsh and quantized pipelines run") {
    const auto task = planted_task(random_matrix(300, 16, 14), 40, 0.05, 15);
    auto proj = std::make_shared<const LshProjector>(16, 512, 3);
    const auto lsh = evaluate_pipeline(task, {LshStage{proj}});
    CHECK(lsh.mean > 0.9);
    auto cal = std::make_shared<const QuantizerCalibration>(calibrate(task.docs, 8));
    CHECK(evaluate_pipeline(task, {QuantizeStage{cal}}).mean == 1.0);
    CHECK(describe({TruncateStage{8}, LshStage{proj}}).find("lsh") != std::string::npos);
}

TEST_CASE("task validation") {
    auto task = planted_task(random_matrix(10, 4, 16), 3, 0.1, 17);
    task.doc_ids[1] = task.doc_ids[0];
    CHECK(code_of([&] { validate_task(task); }) == ErrorCode::Validation);
    task = planted_task(random_matrix(10, 4, 16), 3, 0.1, 17);
    task.query_ids.pop_back();
    CHECK(code_of([&] { validate_task(task); }) == ErrorCode::Validation);
}

TEST_CASE("report tables") {
    EvalReport r;
    r.task = "t";
    r.transform = "raw";
    r.mean = 0.5;
    r.per_query = {{"q1", 1.0}, {"q2", 0.0}};
    CHECK(format_report_tsv({r}) == "task\ttransform\tmean_ndcg\nt\traw\t0.500000\n");
    CHECK(format_per_query_tsv(r).rfind("task\ttransform\tquery_id\tndcg\n", 0) == 0);
}
