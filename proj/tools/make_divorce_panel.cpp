// Writes a synthetic state-by-year panel shaped like the unilateral divorce
// data: 51 states over 1964-1996, nine treated in 1964, five never treated and
// twelve later adoption cohorts, with two time-invariant controls.
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <vector>

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : "divorce_synthetic.csv";
  constexpr int first_year = 1964;
  constexpr int last_year = 1996;

  // Adoption year per state; 0 means never treated. Every later cohort has at
  // least three states so the two-control design stays full rank.
  std::vector<int> adopt(9, 1964);
  adopt.insert(adopt.end(), 5, 0);
  for (int year : {1969, 1970, 1971, 1972, 1973, 1974, 1975, 1976, 1977, 1980, 1984, 1985})
    adopt.insert(adopt.end(), 3, year);
  adopt.push_back(1973);

  std::mt19937_64 rng(1974);
  std::normal_distribution<double> z(0.0, 1.0);
  std::ofstream out(path);
  if (!out) {
    std::cerr << "cannot write " << path << "\n";
    return 1;
  }
  out << "unit,time,response,cohort,lnpersinc,afdcrolls\n" << std::setprecision(10);
  for (std::size_t s = 0; s < adopt.size(); ++s) {
    const double income = 9.6 + 0.15 * z(rng);
    const double welfare = 0.05 + 0.015 * z(rng);
    const double level = 52.0 + 6.0 * z(rng) - 8.0 * (income - 9.6);
    for (int year = first_year; year <= last_year; ++year) {
      const double trend = -0.25 * (year - first_year) + 3.0 * (welfare - 0.05) * (year - first_year);
      const bool treated = adopt[s] != 0 && year >= adopt[s];
      const double effect = treated ? -2.0 - (year - adopt[s] >= 10 ? 1.0 : 0.0) : 0.0;
      out << "S" << std::setw(2) << std::setfill('0') << s + 1 << std::setfill(' ') << ',' << year << ','
          << level + trend + effect + 2.5 * z(rng) << ',' << adopt[s] << ',' << income << ',' << welfare << '\n';
    }
  }
  return 0;
}
