// Writes a synthetic digit dataset as IDX pairs plus a manifest whose
// checksums match a reload through the same paths.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mscnn/data.hpp"
#include "synth.hpp"

using namespace mscnn;

namespace {

SplitCount manifest_row(const std::string& split, const std::string& images,
                        const std::string& labels) {
    // reload through the final paths so the recorded checksum matches what a
    // consumer addressing the same files will compute
    const std::vector<Sample> back = load_idx(images, labels);
    return {split, static_cast<int>(back.size()), source_checksum(back)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic seven-segment digit dataset"};
    std::string out_dir;
    int classes = 10, train_per_class = 100, test_per_class = 20, size = 28;
    std::uint64_t seed = 1;
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--classes", classes, "digit classes, 2..10")->check(CLI::Range(2, 10));
    app.add_option("--train", train_per_class, "training samples per class")
        ->check(CLI::PositiveNumber);
    app.add_option("--test", test_per_class, "test samples per class, 0 to skip")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--size", size, "square canvas edge")->check(CLI::Range(16, 128));
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(out_dir);
        DatasetManifest manifest;
        manifest.name = "synthetic-digits";
        manifest.classes = classes;

        const std::string train_images = out_dir + "/train-images.idx";
        const std::string train_labels = out_dir + "/train-labels.idx";
        write_idx(train_images, train_labels,
                  synth::render_split(classes, train_per_class, size, seed, 0));
        manifest.splits.push_back(manifest_row("train", train_images, train_labels));
        std::cout << "wrote " << train_images << " (" << classes * train_per_class
                  << " samples)\n";

        if (test_per_class > 0) {
            const std::string test_images = out_dir + "/test-images.idx";
            const std::string test_labels = out_dir + "/test-labels.idx";
            write_idx(test_images, test_labels,
                      synth::render_split(classes, test_per_class, size, seed, 1));
            manifest.splits.push_back(manifest_row("test", test_images, test_labels));
            std::cout << "wrote " << test_images << " (" << classes * test_per_class
                      << " samples)\n";
        }

        save_manifest(out_dir + "/manifest.txt", manifest);
        std::cout << "wrote " << out_dir << "/manifest.txt\n";
    } catch (const std::exception& e) {
        std::cerr << "make-dataset: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
