#pragma once

#include "strod/assignment.hpp"
#include "strod/corpus.hpp"
#include "strod/error.hpp"
#include "strod/hierarchy.hpp"
#include "strod/moments.hpp"
#include "strod/path.hpp"
#include "strod/phrases.hpp"
#include "strod/serialize.hpp"
#include "strod/session.hpp"
#include "strod/sparse_eigen.hpp"
#include "strod/spectral.hpp"
#include "strod/stopwords.hpp"
#include "strod/synth.hpp"
#include "strod/tensor.hpp"
