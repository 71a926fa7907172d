#include "synth.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: gencorpus <dir> [n_maps]\n";
        return 1;
    }
    synth::write_corpus(argv[1], argc > 2 ? std::atoi(argv[2]) : 20);
    return 0;
}
