#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lambda_flows/coalescent.hpp"
#include "lambda_flows/lookdown.hpp"
#include "lambda_flows/stats.hpp"

using namespace lambda_flows;

namespace {

LookdownGraphN hand_graph(int n, double s0, double s1,
                          std::vector<ReproductionEvent> events) {
    LookdownGraphN g;
    g.n = n;
    g.s0 = s0;
    g.s1 = s1;
    g.measure_label = "custom";
    g.events = std::move(events);
    return g;
}

std::vector<double> uniform_types(int n, std::uint64_t seed) {
    RandomStream rng(seed);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& x : out) x = rng.uniform01();
    return out;
}

/// rgs key of the partition of [n] grouping equal values of v.
std::string equality_key(const std::vector<double>& v) {
    std::vector<std::vector<int>> raw;
    for (std::size_t i = 0; i < v.size(); ++i) {
        bool placed = false;
        for (auto& blk : raw) {
            if (v[static_cast<std::size_t>(blk.front() - 1)] == v[i]) {
                blk.push_back(static_cast<int>(i) + 1);
                placed = true;
                break;
            }
        }
        if (!placed) raw.push_back({static_cast<int>(i) + 1});
    }
    return rgs_key(make_partition(static_cast<int>(v.size()), raw));
}

} // namespace

TEST_CASE("reproduction events push types up by level order") {
    const std::vector<double> x = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};

    REQUIRE(apply_event(x, {2, 5, 7}) ==
            std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.2, 0.5, 0.2});
    REQUIRE(apply_event(x, {1, 2, 3, 4, 5, 6, 7}) ==
            std::vector<double>(7, 0.1));

    const std::vector<double> y = {0.1, 0.2, 0.3, 0.4};
    REQUIRE(apply_event(y, {1, 2, 3}) == std::vector<double>{0.1, 0.1, 0.1, 0.2});

    const std::vector<int> labels = {10, 20, 30, 40, 50, 60, 70};
    REQUIRE(apply_event(labels, {2, 5, 7}) ==
            std::vector<int>{10, 20, 30, 40, 20, 50, 20});

    REQUIRE_THROWS_AS(apply_event(y, {2}), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_event(y, {2, 2}), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_event(y, {3, 2}), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_event(y, {0, 2}), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_event(y, {2, 5}), std::invalid_argument);
}

TEST_CASE("graph sampling covers the window with ordered valid events") {
    const LookdownGraphN g = sample_graph(LambdaMeasure::lebesgue(), 5, 0.0, 2.0, 0x11d001u);
    REQUIRE(g.n == 5);
    REQUIRE(g.event_rate == 4.0);
    REQUIRE(g.measure_label == "lebesgue");
    REQUIRE_FALSE(g.events.empty());
    double prev = 0.0;
    for (const auto& ev : g.events) {
        REQUIRE(ev.t > prev);
        REQUIRE(ev.t <= 2.0);
        REQUIRE(ev.levels.size() >= 2);
        int lv = 0;
        for (int v : ev.levels) {
            REQUIRE(v > lv);
            lv = v;
        }
        REQUIRE(lv <= 5);
        prev = ev.t;
    }

    const LookdownGraphN pair = sample_graph(LambdaMeasure::dirac0(1.0), 2, 0.0, 5.0, 0x11d002u);
    REQUIRE_FALSE(pair.events.empty());
    for (const auto& ev : pair.events) REQUIRE(ev.levels == std::vector<int>{1, 2});

    REQUIRE(sample_graph(LambdaMeasure::lebesgue(), 5, 1.0, 1.0, 1u).events.empty());
    REQUIRE_THROWS_AS(sample_graph(LambdaMeasure::lebesgue(), 5, 1.0, 0.5, 1u),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(sample_graph(LambdaMeasure::lebesgue(), 1, 0.0, 1.0, 1u),
                      std::invalid_argument);

    const LookdownGraphN empty = sample_graph(LambdaMeasure::dirac0(0.0), 4, 0.0, 9.0, 7u);
    REQUIRE(empty.events.empty());
    REQUIRE(empty.event_rate == 0.0);

    REQUIRE(to_jsonl(sample_graph(LambdaMeasure::lebesgue(), 5, 0.0, 2.0, 0x11d001u)) ==
            to_jsonl(g));
    REQUIRE(to_jsonl(sample_graph(LambdaMeasure::lebesgue(), 5, 0.0, 2.0, 0x11d003u)) !=
            to_jsonl(g));

    REQUIRE_THROWS_AS(sample_graph(LambdaMeasure::lebesgue(), 6, 0.0, 50.0, 3u, 3),
                      std::runtime_error);
}

TEST_CASE("event counts match the total merge rate") {
    MeanVar kingman;
    for (int r = 0; r < 20000; ++r) {
        const auto g = sample_graph(LambdaMeasure::dirac0(1.0), 3, 0.0, 1.0,
                                    split_seed(0x11d010u, static_cast<std::uint64_t>(r)));
        kingman.add(static_cast<double>(g.events.size()));
    }
    REQUIRE(std::abs(kingman.mean - 3.0) < 0.07);

    MeanVar lebesgue;
    for (int r = 0; r < 20000; ++r) {
        const auto g = sample_graph(LambdaMeasure::lebesgue(), 3, 0.0, 1.0,
                                    split_seed(0x11d011u, static_cast<std::uint64_t>(r)));
        if (r == 0) REQUIRE(g.event_rate == 2.0);
        lebesgue.add(static_cast<double>(g.events.size()));
    }
    REQUIRE(std::abs(lebesgue.mean - 2.0) < 0.055);
}

TEST_CASE("group sizes follow the weighted merger law") {
    // lebesgue on four levels: group sizes 2,3,4 carry weights 2, 2/3, 1/3.
    std::map<int, std::int64_t> counts;
    std::int64_t total = 0;
    for (int r = 0; r < 2000 && total < 30000; ++r) {
        const auto g = sample_graph(LambdaMeasure::lebesgue(), 4, 0.0, 5.0,
                                    split_seed(0x11d020u, static_cast<std::uint64_t>(r)));
        for (const auto& ev : g.events) {
            ++counts[static_cast<int>(ev.levels.size())];
            ++total;
        }
    }
    REQUIRE(total >= 25000);
    const double n = static_cast<double>(total);
    const std::vector<std::pair<int, double>> expected = {
        {2, 2.0 / 3.0}, {3, 2.0 / 9.0}, {4, 1.0 / 9.0}};
    for (const auto& [p, prob] : expected) {
        const double got = static_cast<double>(counts[p]) / n;
        REQUIRE(std::abs(got - prob) < 5.5 * std::sqrt(prob * (1.0 - prob) / n));
    }
}

TEST_CASE("flow partitions fold single events by ancestral level") {
    const LookdownGraphN g =
        hand_graph(7, 0.0, 3.0, {{1.0, {2, 5, 7}}, {2.0, {1, 2, 4}}});

    REQUIRE(flow_partition(g, 0.0, 0.5) == partition_identity(7));
    REQUIRE(flow_partition(g, 1.0, 1.0) == partition_identity(7));
    REQUIRE(flow_partition(g, 0.0, 1.0) ==
            make_partition(7, {{1}, {2, 5, 7}, {3}, {4}, {6}}));
    REQUIRE(flow_partition(g, 1.0, 2.0) ==
            make_partition(7, {{1, 2, 4}, {3}, {5}, {6}, {7}}));
    REQUIRE(flow_partition(g, 2.0, 3.0) == partition_identity(7));
    REQUIRE(flow_partition(g, 0.0, 2.5) ==
            make_partition(7, {{1, 2, 4}, {3, 7}, {5}, {6}}));

    const LookdownGraphN two = hand_graph(7, 0.0, 1.0, {{0.25, {2, 5}}});
    REQUIRE(flow_partition(two, 0.0, 1.0) ==
            make_partition(7, {{1}, {2, 5}, {3}, {4}, {6}, {7}}));

    REQUIRE_THROWS_AS(flow_partition(g, -0.1, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(flow_partition(g, 0.0, 3.1), std::invalid_argument);
    REQUIRE_THROWS_AS(flow_partition(g, 2.0, 1.0), std::invalid_argument);
}

TEST_CASE("time evolution agrees with the flow partition exactly") {
    for (int r = 0; r < 100; ++r) {
        const std::uint64_t seed = split_seed(0x11d030u, static_cast<std::uint64_t>(r));
        const auto g = sample_graph(LambdaMeasure::lebesgue(), 8, 0.0, 1.5, seed);
        const auto types = uniform_types(8, split_seed(seed, 1));

        std::vector<double> ts = {0.0, 0.7, 1.5};
        for (const auto& ev : g.events) ts.push_back(ev.t);
        for (double t : ts) {
            const auto evolved = evolve(g, types, t);
            const PartitionN pi = flow_partition(g, 0.0, t);
            const auto ids = detail::block_ids(pi);
            for (int j = 1; j <= 8; ++j)
                REQUIRE(evolved[static_cast<std::size_t>(j - 1)] ==
                        types[static_cast<std::size_t>(ids[static_cast<std::size_t>(j)] - 1)]);
        }
    }
    const LookdownGraphN g = hand_graph(3, 0.0, 1.0, {});
    REQUIRE_THROWS_AS(evolve(g, {0.1, 0.2}, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(evolve(g, {0.1, 0.2, 0.3}, 1.5), std::invalid_argument);
}

TEST_CASE("lowest levels track block minima") {
    const LookdownGraphN g = hand_graph(7, 0.0, 2.0, {{1.0, {2, 5, 7}}});
    for (int i = 1; i <= 7; ++i) REQUIRE(lowest_level(g, i, 0.0) == i);
    REQUIRE(lowest_level(g, 1, 2.0) == 1);
    REQUIRE(lowest_level(g, 5, 2.0) == 6);
    REQUIRE_FALSE(lowest_level(g, 6, 2.0).has_value());
    REQUIRE_FALSE(lowest_level(g, 7, 2.0).has_value());
    REQUIRE(lowest_levels(g, 2.0) == std::vector<int>{1, 2, 3, 4, 6});
    REQUIRE_THROWS_AS(lowest_level(g, 0, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(lowest_level(g, 8, 1.0), std::invalid_argument);

    const std::vector<LambdaMeasure> measures = {LambdaMeasure::beta(1.5),
                                                 LambdaMeasure::lebesgue()};
    for (std::size_t m = 0; m < measures.size(); ++m) {
        for (int r = 0; r < 75; ++r) {
            const auto graph = sample_graph(
                measures[m], 12, 0.0, 1.2,
                split_seed(0x11d040u + m, static_cast<std::uint64_t>(r)));
            std::vector<double> ts = {0.0, 1.2};
            for (const auto& ev : graph.events) ts.push_back(ev.t);
            for (double t : ts) {
                const PartitionN pi = flow_partition(graph, 0.0, t);
                std::vector<int> expected;
                for (const auto& blk : pi.blocks) expected.push_back(blk.front());
                REQUIRE(lowest_levels(graph, t) == expected);
            }
        }
    }
}

TEST_CASE("empirical measures split atoms from dust") {
    const LookdownGraphN quiet = hand_graph(4, 0.0, 1.0, {});
    const std::vector<double> x = {0.15, 0.35, 0.55, 0.75};
    const MeasureState start = empirical_measure(quiet, x, 0.0, 1.0);
    REQUIRE(start.atoms.empty());
    REQUIRE(start.dust == 1.0);

    const LookdownGraphN g = hand_graph(4, 0.0, 1.0, {{0.5, {1, 2, 3}}});
    const MeasureState after = empirical_measure(g, x, 0.0, 1.0);
    REQUIRE(after.atoms ==
            std::vector<std::pair<double, double>>{{0.15, 0.75}});
    REQUIRE(after.dust == 0.25);

    REQUIRE_THROWS_AS(empirical_measure(g, {0.2, 0.2, 0.3, 0.4}, 0.0, 1.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(empirical_measure(g, {0.2, 0.3, 0.4}, 0.0, 1.0), std::invalid_argument);

    // Pair mergers at rate one drive 30 levels to a common ancestor well
    // before horizon 15; the measure then sits on the level-1 type alone.
    const auto fixed = sample_graph(LambdaMeasure::dirac0(1.0), 30, 0.0, 15.0, 0x11d050u);
    const auto types = uniform_types(30, 0x11d051u);
    const MeasureState fixation = empirical_measure(fixed, types, 0.0, 15.0);
    REQUIRE(fixation.atoms == std::vector<std::pair<double, double>>{{types[0], 1.0}});
    REQUIRE(fixation.dust == 0.0);

    for (int r = 0; r < 50; ++r) {
        const auto graph = sample_graph(LambdaMeasure::beta(0.8), 16, 0.0, 0.9,
                                        split_seed(0x11d052u, static_cast<std::uint64_t>(r)));
        const auto strand = uniform_types(16, split_seed(0x11d053u, static_cast<std::uint64_t>(r)));
        const MeasureState st = empirical_measure(graph, strand, 0.0, 0.9);
        double mass = st.dust;
        for (const auto& [loc, w] : st.atoms) {
            REQUIRE(w > 0.0);
            mass += w;
        }
        REQUIRE(std::abs(mass - 1.0) <= 1e-12);
    }
}

TEST_CASE("events are recoverable from partition pairs") {
    const PartitionN before = make_partition(4, {{1, 2, 3}, {4}});
    const PartitionN after = make_partition(4, {{1, 3}, {2}, {4}});
    REQUIRE(reconstruct_event(before, after) == std::vector<int>{1, 2});

    REQUIRE_THROWS_AS(reconstruct_event(before, before), std::invalid_argument);
    REQUIRE_THROWS_AS(reconstruct_event(before, partition_identity(5)), std::invalid_argument);
    REQUIRE_THROWS_AS(
        reconstruct_event(make_partition(4, {{1, 2}, {3, 4}}), partition_identity(4)),
        std::invalid_argument);
    REQUIRE_THROWS_AS(reconstruct_event(make_partition(3, {{1, 3}, {2}}),
                                        make_partition(3, {{1, 2}, {3}})),
                      std::invalid_argument);

    const std::vector<std::pair<LambdaMeasure, int>> setups = {
        {LambdaMeasure::lebesgue(), 15}, {LambdaMeasure::beta(0.5), 10}};
    for (std::size_t m = 0; m < setups.size(); ++m) {
        for (int r = 0; r < 100; ++r) {
            const auto g = sample_graph(setups[m].first, setups[m].second, 0.0, 0.4,
                                        split_seed(0x11d060u + m, static_cast<std::uint64_t>(r)));
            double prev = g.s0;
            for (const auto& ev : g.events) {
                const PartitionN step = flow_partition(g, prev, ev.t);
                REQUIRE(reconstruct_event(step, partition_identity(g.n)) == ev.levels);
                prev = ev.t;
            }
        }
    }
}

TEST_CASE("flow partitions satisfy the composition identity exactly") {
    const std::vector<std::pair<LambdaMeasure, int>> setups = {
        {LambdaMeasure::lebesgue(), 20},
        {LambdaMeasure::dirac(0.5, 2.0), 12},
        {LambdaMeasure::beta(1.5), 10}};
    for (std::size_t m = 0; m < setups.size(); ++m) {
        for (int r = 0; r < 100; ++r) {
            const auto g = sample_graph(setups[m].first, setups[m].second, 0.0, 0.35,
                                        split_seed(0x11d070u + m, static_cast<std::uint64_t>(r)));
            std::vector<double> bounds = {g.s0};
            for (const auto& ev : g.events) bounds.push_back(ev.t);
            bounds.push_back(g.s1);
            const std::size_t k = bounds.size();
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = a; b < k; ++b)
                    for (std::size_t c = b; c < k; ++c) {
                        const PartitionN whole = flow_partition(g, bounds[a], bounds[c]);
                        const PartitionN late = flow_partition(g, bounds[b], bounds[c]);
                        const PartitionN early = flow_partition(g, bounds[a], bounds[b]);
                        REQUIRE(whole == coag(late, early));
                    }
        }
    }
}

TEST_CASE("windowed partitions reproduce the coalescent law backwards") {
    const std::vector<LambdaMeasure> measures = {LambdaMeasure::dirac0(1.0),
                                                 LambdaMeasure::lebesgue()};
    for (std::size_t m = 0; m < measures.size(); ++m) {
        std::map<int, std::int64_t> via_flow, via_chain;
        for (int r = 0; r < 20000; ++r) {
            const auto g = sample_graph(measures[m], 5, 0.0, 0.8,
                                        split_seed(0x11d080u + m, static_cast<std::uint64_t>(r)));
            ++via_flow[flow_partition(g, 0.0, 0.8).block_count()];
            const auto path =
                simulate_block_counts(measures[m], 5, 0.8,
                                      split_seed(0x11d090u + m, static_cast<std::uint64_t>(r)));
            ++via_chain[block_count_curve(path, {0.8})[0]];
        }
        REQUIRE(total_variation(via_flow, via_chain) < 0.03);
    }
}

TEST_CASE("disjoint windows are independent and identically distributed") {
    std::map<std::string, std::int64_t> first, second;
    std::vector<int> ids1, ids2;
    std::map<std::string, int> dict;
    for (int r = 0; r < 30000; ++r) {
        const auto g = sample_graph(LambdaMeasure::lebesgue(), 4, 0.0, 1.0,
                                    split_seed(0xabc000u, static_cast<std::uint64_t>(r)));
        const std::string k1 = rgs_key(flow_partition(g, 0.0, 0.5));
        const std::string k2 = rgs_key(flow_partition(g, 0.5, 1.0));
        ++first[k1];
        ++second[k2];
        if (dict.find(k1) == dict.end()) dict.emplace(k1, static_cast<int>(dict.size()));
        if (dict.find(k2) == dict.end()) dict.emplace(k2, static_cast<int>(dict.size()));
        ids1.push_back(dict[k1]);
        ids2.push_back(dict[k2]);
    }
    REQUIRE(total_variation(first, second) < 0.025);
    REQUIRE(chi_square_independence_p(ids1, ids2, 200, 99u) > 0.05);
}

TEST_CASE("level types stay exchangeable under coordinate relabeling") {
    const std::vector<int> sigma = {2, 3, 4, 1};
    std::map<std::string, std::int64_t> plain, permuted;
    for (int r = 0; r < 20000; ++r) {
        {
            const std::uint64_t seed = split_seed(0xe1c003u, static_cast<std::uint64_t>(r));
            const auto g = sample_graph(LambdaMeasure::lebesgue(), 4, 0.0, 0.6, seed);
            const auto v = evolve(g, uniform_types(4, split_seed(seed, 1)), 0.6);
            ++plain[equality_key(v)];
        }
        {
            const std::uint64_t seed = split_seed(0xfad003u, static_cast<std::uint64_t>(r));
            const auto g = sample_graph(LambdaMeasure::lebesgue(), 4, 0.0, 0.6, seed);
            const auto v = evolve(g, uniform_types(4, split_seed(seed, 1)), 0.6);
            std::vector<double> w(4);
            for (int j = 0; j < 4; ++j)
                w[static_cast<std::size_t>(j)] =
                    v[static_cast<std::size_t>(sigma[static_cast<std::size_t>(j)] - 1)];
            ++permuted[equality_key(w)];
        }
    }
    REQUIRE(total_variation(plain, permuted) < 0.025);
}

TEST_CASE("graphs round-trip through JSONL exactly") {
    const auto g = sample_graph(LambdaMeasure::beta(1.5), 12, 0.25, 1.75, 0x11d0d0u);
    const std::string text = to_jsonl(g);
    std::istringstream in(text);
    const LookdownGraphN back = parse_lookdown_graph(in);
    REQUIRE(back.n == g.n);
    REQUIRE(back.s0 == g.s0);
    REQUIRE(back.s1 == g.s1);
    REQUIRE(back.event_rate == g.event_rate);
    REQUIRE(back.seed == g.seed);
    REQUIRE(back.measure_label == "beta(0.5,1.5)");
    REQUIRE(back.events.size() == g.events.size());
    for (std::size_t i = 0; i < g.events.size(); ++i) {
        REQUIRE(back.events[i].t == g.events[i].t);
        REQUIRE(back.events[i].levels == g.events[i].levels);
    }
    REQUIRE(to_jsonl(back) == text);

    const LookdownGraphN empty = sample_graph(LambdaMeasure::dirac0(0.0), 3, 0.0, 1.0, 2u);
    std::istringstream ein(to_jsonl(empty));
    REQUIRE(parse_lookdown_graph(ein).events.empty());

    const auto reject = [](const std::string& body) {
        std::istringstream bad(body);
        REQUIRE_THROWS_AS(parse_lookdown_graph(bad), std::invalid_argument);
    };
    reject("# lambda_flows bridge_flow s0=0 s1=1\n");
    reject("# lambda_flows lookdown_graph n=1 s0=0 s1=1 event_rate=0 seed=0 measure=lebesgue\n");
    reject("# lambda_flows lookdown_graph n=4 s0=1 s1=0 event_rate=3 seed=0 measure=lebesgue\n");
    const std::string head =
        "# lambda_flows lookdown_graph n=4 s0=0 s1=1 event_rate=3 seed=0 measure=lebesgue\n";
    reject(head + "{\"t\":0.5,\"levels\":[0,2]}\n");
    reject(head + "{\"t\":0.5,\"levels\":[2,5]}\n");
    reject(head + "{\"t\":0.5,\"levels\":[2]}\n");
    reject(head + "{\"t\":0.5,\"levels\":[2,2]}\n");
    reject(head + "{\"t\":0.5,\"levels\":[1,2]}\n{\"t\":0.5,\"levels\":[1,2]}\n");
    reject(head + "{\"t\":1.5,\"levels\":[1,2]}\n");
    reject(head + "{\"t\":0,\"levels\":[1,2]}\n");
    reject(head + "{\"t\":x,\"levels\":[1,2]}\n");
    reject(head + "{\"t\":0.5,\"levels\":[]}\n");
    reject(head + "{\"levels\":[1,2],\"t\":0.5}\n");
}

TEST_CASE("trajectories stream as deterministic CSV") {
    const LookdownGraphN g =
        hand_graph(3, 0.0, 2.0, {{0.5, {1, 3}}, {1.25, {2, 3}}});
    std::ostringstream os;
    write_trajectory_csv(os, g, {0.1, 0.2, 0.7});
    REQUIRE(os.str() ==
            "time,level,type\n"
            "0,1,0.1\n0,2,0.2\n0,3,0.7\n"
            "0.5,1,0.1\n0.5,2,0.2\n0.5,3,0.1\n"
            "1.25,1,0.1\n1.25,2,0.2\n1.25,3,0.2\n");

    std::ostringstream bad;
    REQUIRE_THROWS_AS(write_trajectory_csv(bad, g, {0.1, 0.2}), std::invalid_argument);
}
