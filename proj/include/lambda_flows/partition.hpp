#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lambda_flows/rng.hpp"

namespace lambda_flows {

/// Partition of {1,...,n} in canonical form: each block sorted ascending,
/// blocks ordered by least element. Canonical form makes equality a plain
/// field-by-field comparison, which the tests rely on being exact.
struct PartitionN {
    int n = 0;
    std::vector<std::vector<int>> blocks;

    bool operator==(const PartitionN&) const = default;

    int block_count() const { return static_cast<int>(blocks.size()); }
};

/// Identity partition O_[n]: every element in its own block.
inline PartitionN partition_identity(int n) {
    if (n < 1) throw std::invalid_argument("partition_identity: n must be >= 1");
    PartitionN out;
    out.n = n;
    out.blocks.reserve(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) out.blocks.push_back({i});
    return out;
}

/// Builds a partition from raw blocks, validating that every integer in
/// {1,...,n} appears exactly once. Blocks are sorted and reordered into
/// canonical form. Errors name the offending integer.
inline PartitionN make_partition(int n, std::vector<std::vector<int>> raw) {
    if (n < 1) throw std::invalid_argument("make_partition: n must be >= 1");
    std::vector<char> seen(static_cast<std::size_t>(n) + 1, 0);
    for (auto& block : raw) {
        if (block.empty()) throw std::invalid_argument("make_partition: empty block");
        for (int v : block) {
            if (v < 1 || v > n)
                throw std::invalid_argument("make_partition: integer " + std::to_string(v) +
                                            " outside 1.." + std::to_string(n));
            if (seen[static_cast<std::size_t>(v)])
                throw std::invalid_argument("make_partition: integer " + std::to_string(v) +
                                            " appears more than once");
            seen[static_cast<std::size_t>(v)] = 1;
        }
        std::sort(block.begin(), block.end());
    }
    for (int v = 1; v <= n; ++v)
        if (!seen[static_cast<std::size_t>(v)])
            throw std::invalid_argument("make_partition: integer " + std::to_string(v) + " missing");
    std::sort(raw.begin(), raw.end(),
              [](const std::vector<int>& a, const std::vector<int>& b) { return a.front() < b.front(); });
    PartitionN out;
    out.n = n;
    out.blocks = std::move(raw);
    return out;
}

/// Coagulation of pi by pi_prime: block i of the result is the union of the
/// pi-blocks indexed by block i of pi_prime. Indices of pi_prime beyond
/// #blocks(pi) reference empty blocks and are dropped, which is the finite
/// counterpart of coagulating by a partition of a larger index set.
inline PartitionN coag(const PartitionN& pi, const PartitionN& pi_prime) {
    const int k = pi.block_count();
    if (pi_prime.n < k)
        throw std::invalid_argument("coag: pi_prime must partition at least #blocks(pi) = " +
                                    std::to_string(k) + " indices, has n = " +
                                    std::to_string(pi_prime.n));
    PartitionN out;
    out.n = pi.n;
    out.blocks.reserve(pi_prime.blocks.size());
    std::vector<int> merged;
    for (const auto& group : pi_prime.blocks) {
        merged.clear();
        for (int j : group) {
            if (j > k) continue;
            const auto& src = pi.blocks[static_cast<std::size_t>(j - 1)];
            merged.insert(merged.end(), src.begin(), src.end());
        }
        if (merged.empty()) continue;
        std::sort(merged.begin(), merged.end());
        out.blocks.push_back(merged);
    }
    std::sort(out.blocks.begin(), out.blocks.end(),
              [](const std::vector<int>& a, const std::vector<int>& b) { return a.front() < b.front(); });
    return out;
}

/// Restriction to {1,...,m}: intersect blocks with [m], drop empties.
inline PartitionN restrict_to(const PartitionN& pi, int m) {
    if (m < 0 || m > pi.n)
        throw std::invalid_argument("restrict_to: m = " + std::to_string(m) +
                                    " outside 0.." + std::to_string(pi.n));
    PartitionN out;
    out.n = m;
    for (const auto& block : pi.blocks) {
        if (block.front() > m) continue;
        auto cut = std::upper_bound(block.begin(), block.end(), m);
        out.blocks.emplace_back(block.begin(), cut);
    }
    return out;
}

namespace detail {

/// block_ids[i] = 1-based index of the block containing i (canonical order).
inline std::vector<int> block_ids(const PartitionN& pi) {
    std::vector<int> ids(static_cast<std::size_t>(pi.n) + 1, 0);
    for (int b = 0; b < pi.block_count(); ++b)
        for (int v : pi.blocks[static_cast<std::size_t>(b)])
            ids[static_cast<std::size_t>(v)] = b + 1;
    return ids;
}

} // namespace detail

/// Largest j <= n with restrict_to(pi, j) == restrict_to(pi_prime, j);
/// returns n exactly when the partitions are equal. The partition metric is
/// 2^{-distance_index}.
inline int distance_index(const PartitionN& pi, const PartitionN& pi_prime) {
    if (pi.n != pi_prime.n)
        throw std::invalid_argument("distance_index: partitions of different ground sets");
    const auto id1 = detail::block_ids(pi);
    const auto id2 = detail::block_ids(pi_prime);
    for (int j = 2; j <= pi.n; ++j) {
        for (int a = 1; a < j; ++a) {
            const bool same1 = id1[static_cast<std::size_t>(a)] == id1[static_cast<std::size_t>(j)];
            const bool same2 = id2[static_cast<std::size_t>(a)] == id2[static_cast<std::size_t>(j)];
            if (same1 != same2) return j - 1;
        }
    }
    return pi.n;
}

inline std::vector<int> block_sizes(const PartitionN& pi) {
    std::vector<int> out;
    out.reserve(pi.blocks.size());
    for (const auto& block : pi.blocks) out.push_back(static_cast<int>(block.size()));
    return out;
}

/// Block frequencies |B_i| / n in block order. At finite n these are exact
/// dyadic-rational-free ratios; both simulation routes compute them with the
/// same division so decomposition checks compare equal bitwise.
inline std::vector<double> block_frequencies(const PartitionN& pi) {
    std::vector<double> out;
    out.reserve(pi.blocks.size());
    for (const auto& block : pi.blocks)
        out.push_back(static_cast<double>(block.size()) / static_cast<double>(pi.n));
    return out;
}

/// The bijection sending an index set I (|I| >= 2) to the partition of [n]
/// whose only non-singleton block is I.
inline PartitionN encode_single_block(const std::vector<int>& index_set, int n) {
    if (index_set.size() < 2)
        throw std::invalid_argument("encode_single_block: need at least two indices");
    std::vector<int> I = index_set;
    std::sort(I.begin(), I.end());
    if (std::adjacent_find(I.begin(), I.end()) != I.end())
        throw std::invalid_argument("encode_single_block: duplicate index");
    if (I.front() < 1 || I.back() > n)
        throw std::invalid_argument("encode_single_block: index " +
                                    std::to_string(I.front() < 1 ? I.front() : I.back()) +
                                    " outside 1.." + std::to_string(n));
    PartitionN out;
    out.n = n;
    out.blocks.reserve(static_cast<std::size_t>(n) - I.size() + 1);
    std::size_t pos = 0;
    for (int j = 1; j <= n; ++j) {
        if (pos < I.size() && I[pos] == j) {
            if (j == I.front()) out.blocks.push_back(I);
            ++pos;
        } else {
            out.blocks.push_back({j});
        }
    }
    return out;
}

/// Inverse of encode_single_block: the unique non-singleton block.
inline std::vector<int> decode_single_block(const PartitionN& pi) {
    const std::vector<int>* found = nullptr;
    for (const auto& block : pi.blocks) {
        if (block.size() < 2) continue;
        if (found)
            throw std::invalid_argument("decode_single_block: more than one non-singleton block");
        found = &block;
    }
    if (!found)
        throw std::invalid_argument("decode_single_block: no non-singleton block");
    return *found;
}

/// Text form "{1,3}{2}{4}": canonical blocks, comma-separated, no spaces.
inline std::string to_text(const PartitionN& pi) {
    std::string out;
    for (const auto& block : pi.blocks) {
        out += '{';
        for (std::size_t i = 0; i < block.size(); ++i) {
            if (i) out += ',';
            out += std::to_string(block[i]);
        }
        out += '}';
    }
    return out;
}

/// Parses the text form, validating the result as a partition of [n] where n
/// is the number of integers listed.
inline PartitionN parse_partition(const std::string& text) {
    std::vector<std::vector<int>> raw;
    std::size_t i = 0;
    int count = 0;
    while (i < text.size()) {
        if (text[i] != '{')
            throw std::invalid_argument("parse_partition: expected '{' at position " + std::to_string(i));
        ++i;
        std::vector<int> block;
        while (true) {
            if (i >= text.size())
                throw std::invalid_argument("parse_partition: unterminated block");
            if (!std::isdigit(static_cast<unsigned char>(text[i])))
                throw std::invalid_argument("parse_partition: expected digit at position " + std::to_string(i));
            int v = 0;
            while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
                v = v * 10 + (text[i] - '0');
                ++i;
            }
            block.push_back(v);
            ++count;
            if (i < text.size() && text[i] == ',') { ++i; continue; }
            if (i < text.size() && text[i] == '}') { ++i; break; }
            throw std::invalid_argument("parse_partition: expected ',' or '}' at position " + std::to_string(i));
        }
        raw.push_back(std::move(block));
    }
    if (count == 0) throw std::invalid_argument("parse_partition: empty text");
    return make_partition(count, std::move(raw));
}

/// Restricted-growth-string key: byte b[i] = block id of element i+1. Compact
/// canonical key for tallying partition distributions.
inline std::string rgs_key(const PartitionN& pi) {
    std::string out(static_cast<std::size_t>(pi.n), '\0');
    for (int b = 0; b < pi.block_count(); ++b)
        for (int v : pi.blocks[static_cast<std::size_t>(b)])
            out[static_cast<std::size_t>(v - 1)] = static_cast<char>(b);
    return out;
}

/// All partitions of [n] (n <= 10), enumerated through restricted growth
/// strings in lexicographic order. Bell(10) = 115975, so exhaustive loops
/// over the output stay cheap.
inline std::vector<PartitionN> all_partitions(int n) {
    if (n < 1 || n > 10)
        throw std::invalid_argument("all_partitions: supported for 1 <= n <= 10");
    std::vector<PartitionN> out;
    std::vector<int> rgs(static_cast<std::size_t>(n), 0);
    while (true) {
        int nblocks = 0;
        for (int v : rgs) nblocks = std::max(nblocks, v + 1);
        std::vector<std::vector<int>> blocks(static_cast<std::size_t>(nblocks));
        for (int i = 0; i < n; ++i) blocks[static_cast<std::size_t>(rgs[static_cast<std::size_t>(i)])].push_back(i + 1);
        PartitionN pi;
        pi.n = n;
        pi.blocks = std::move(blocks); // RGS labels are first-occurrence ordered, already canonical
        out.push_back(std::move(pi));
        // next restricted growth string
        int i = n - 1;
        for (; i > 0; --i) {
            int prefix_max = 0;
            for (int j = 0; j < i; ++j) prefix_max = std::max(prefix_max, rgs[static_cast<std::size_t>(j)]);
            if (rgs[static_cast<std::size_t>(i)] <= prefix_max) break;
        }
        if (i == 0) break;
        rgs[static_cast<std::size_t>(i)] += 1;
        for (int j = i + 1; j < n; ++j) rgs[static_cast<std::size_t>(j)] = 0;
    }
    return out;
}

/// Uniform random partition of [n] (n <= 10) drawn by index into the full
/// enumeration, cached per n.
inline PartitionN random_partition(int n, RandomStream& rng) {
    static thread_local std::vector<std::vector<PartitionN>> cache(11);
    if (n < 1 || n > 10)
        throw std::invalid_argument("random_partition: supported for 1 <= n <= 10");
    auto& all = cache[static_cast<std::size_t>(n)];
    if (all.empty()) all = all_partitions(n);
    return all[rng.uniform_below(all.size())];
}

} // namespace lambda_flows
