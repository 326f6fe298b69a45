#pragma once

#include <compare>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace revolv {

// Calendar quarter, encoded as year*4 + (q-1). All date math in this
// library is quarter-granular.
class Quarter {
public:
    constexpr Quarter() = default;
    constexpr Quarter(int year, int q) : index_(year * 4 + (q - 1)) {
        if (q < 1 || q > 4) throw std::invalid_argument("quarter must be in 1..4");
    }

    static constexpr Quarter from_index(int index) {
        Quarter out;
        out.index_ = index;
        return out;
    }

    constexpr int index() const { return index_; }
    constexpr int year() const { return index_ >= 0 ? index_ / 4 : -((-index_ + 3) / 4); }
    constexpr int quarter_of_year() const { return index_ - year() * 4 + 1; }

    friend constexpr auto operator<=>(Quarter, Quarter) = default;

    constexpr Quarter operator+(int quarters) const { return from_index(index_ + quarters); }
    constexpr Quarter operator-(int quarters) const { return from_index(index_ - quarters); }
    constexpr int operator-(Quarter other) const { return index_ - other.index_; }
    Quarter& operator++() { ++index_; return *this; }

    // "2008Q3"
    std::string str() const {
        return std::to_string(year()) + "Q" + std::to_string(quarter_of_year());
    }

    static std::optional<Quarter> parse(std::string_view text) {
        const auto qpos = text.find('Q');
        if (qpos == std::string_view::npos || qpos == 0 || qpos + 1 >= text.size())
            return std::nullopt;
        int year = 0, q = 0;
        try {
            size_t used = 0;
            year = std::stoi(std::string(text.substr(0, qpos)), &used);
            if (used != qpos) return std::nullopt;
            q = std::stoi(std::string(text.substr(qpos + 1)), &used);
            if (used != text.size() - qpos - 1) return std::nullopt;
        } catch (const std::exception&) {
            return std::nullopt;
        }
        if (q < 1 || q > 4) return std::nullopt;
        return Quarter(year, q);
    }

private:
    int index_ = 0;
};

// Months spanned by [from, to), at quarter granularity.
inline int months_between(Quarter from, Quarter to) { return 3 * (to - from); }

} // namespace revolv
