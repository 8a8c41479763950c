// Copyright 2026 The Semvar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEMVAR_GEMM_HPP_
#define SEMVAR_GEMM_HPP_

#include <cstdint>

namespace semvar::kernels {

// C[m,n] (+)= op(A) op(B), all row-major and contiguous. op(A) is A[m,k]
// or, with trans_a, A stored as [k,m]; likewise op(B) is B[k,n] or B stored
// as [n,k]. Results do not depend on the alignment of the buffers.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace semvar::kernels

#endif  // SEMVAR_GEMM_HPP_
