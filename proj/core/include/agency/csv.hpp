#ifndef AGENCY_CSV_HPP
#define AGENCY_CSV_HPP

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace agency {

// Fixed CSV dialect: '.' decimal, ',' separator, LF line endings, doubles at
// 17 significant digits so values round-trip exactly. Every file starts with
// a one-line schema header.
class CsvWriter {
public:
    CsvWriter(std::ostream& os, const std::string& schema) : os_(os) {
        os_ << "# schema: " << schema << "\n";
    }

    void header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (i) os_ << ',';
            os_ << cols[i];
        }
        os_ << '\n';
    }

    static std::string format(double x) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        return buf;
    }

    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) os_ << ',';
            os_ << format(values[i]);
        }
        os_ << '\n';
    }

    void raw_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << cells[i];
        }
        os_ << '\n';
    }

private:
    std::ostream& os_;
};

}  // namespace agency

#endif  // AGENCY_CSV_HPP
