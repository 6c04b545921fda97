#include <iostream>

#include <CLI11.hpp>

#include "fga/error.hpp"
#include "fga/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Write a small synthetic experiment (data, model, config)"};
    std::string out;
    fga::PlantedOptions opt;
    app.add_option("out", out, "Output directory")->required();
    app.add_option("--seed", opt.seed, "Random seed");
    app.add_option("--train-per-class", opt.train_per_class);
    app.add_option("--test-per-class", opt.test_per_class);
    CLI11_PARSE(app, argc, argv);
    try {
        std::cout << fga::write_planted_experiment(out, opt).string() << "\n";
    } catch (const fga::Error& e) {
        std::cerr << "fga-demo: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
