/*
 * BLAS GEMM interposition shim.
 *
 * Exports dgemm_, dgemm, zgemm_ and zgemm with the Fortran calling
 * convention.  Each call is forwarded to ozemu.shim._c_dgemm / _c_zgemm in
 * an embedded (or already running) Python interpreter, which applies the
 * GEMM_EMU_* configuration.  Preload it with LD_PRELOAD to reroute an
 * unmodified dynamically linked program.
 *
 * The library does not link libpython.  Python C-API symbols are looked up
 * at run time: first in the running process (the shim was loaded into a
 * Python program), else from the libpython named at build time
 * (OZEMU_LIBPYTHON, overridable through the environment variable of the
 * same name), which is then initialized and finalized at exit.
 */
#define _GNU_SOURCE
#include <dlfcn.h>
#include <pthread.h>
#include <stdio.h>
#include <stdlib.h>

#ifndef OZEMU_LIBPYTHON
#define OZEMU_LIBPYTHON "libpython3.so"
#endif

typedef struct { double re, im; } zdouble;
typedef void PyObj;

static int (*py_is_initialized)(void);
static void (*py_initialize_ex)(int);
static int (*py_finalize_ex)(void);
static int (*gil_ensure)(void);
static void (*gil_release)(int);
static void *(*save_thread)(void);
static PyObj *(*import_module)(const char *);
static PyObj *(*get_attr)(PyObj *, const char *);
static PyObj *(*call_function)(PyObj *, const char *, ...);
static long (*long_as_long)(PyObj *);
static void (*dec_ref)(PyObj *);
static PyObj *(*err_occurred)(void);
static void (*err_print)(void);

static pthread_once_t init_once = PTHREAD_ONCE_INIT;
static int py_ready;          /* callbacks usable */
static int py_owned;          /* we started the interpreter */
static PyObj *cb_dgemm, *cb_zgemm;
static __thread int in_shim;  /* recursion guard */

static void *lookup(void *lib, const char *name)
{
    void *p = dlsym(lib ? lib : RTLD_DEFAULT, name);
    if (!p)
        fprintf(stderr, "ozemu shim: missing symbol %s\n", name);
    return p;
}

static int resolve_api(void *lib)
{
    *(void **)&py_initialize_ex = lookup(lib, "Py_InitializeEx");
    *(void **)&py_finalize_ex = lookup(lib, "Py_FinalizeEx");
    *(void **)&gil_ensure = lookup(lib, "PyGILState_Ensure");
    *(void **)&gil_release = lookup(lib, "PyGILState_Release");
    *(void **)&save_thread = lookup(lib, "PyEval_SaveThread");
    *(void **)&import_module = lookup(lib, "PyImport_ImportModule");
    *(void **)&get_attr = lookup(lib, "PyObject_GetAttrString");
    *(void **)&call_function = lookup(lib, "PyObject_CallFunction");
    *(void **)&long_as_long = lookup(lib, "PyLong_AsLong");
    *(void **)&dec_ref = lookup(lib, "Py_DecRef");
    *(void **)&err_occurred = lookup(lib, "PyErr_Occurred");
    *(void **)&err_print = lookup(lib, "PyErr_Print");
    return py_initialize_ex && py_finalize_ex && gil_ensure && gil_release
        && save_thread && import_module && get_attr && call_function
        && long_as_long && dec_ref && err_occurred && err_print;
}

static void finalize_python(void)
{
    if (py_owned && py_ready) {
        gil_ensure();
        py_ready = 0;
        py_finalize_ex();
    }
}

static void init_python(void)
{
    void *lib = NULL;
    *(void **)&py_is_initialized = dlsym(RTLD_DEFAULT, "Py_IsInitialized");
    if (!py_is_initialized) {
        const char *path = getenv("OZEMU_LIBPYTHON");
        if (!path || !*path)
            path = OZEMU_LIBPYTHON;
        lib = dlopen(path, RTLD_NOW | RTLD_GLOBAL);
        if (!lib) {
            fprintf(stderr, "ozemu shim: cannot load %s: %s\n", path, dlerror());
            return;
        }
        *(void **)&py_is_initialized = lookup(lib, "Py_IsInitialized");
        if (!py_is_initialized)
            return;
    }
    if (!resolve_api(lib))
        return;
    if (!py_is_initialized()) {
        if (!lib) {
            /* a Python program that has not started its interpreter yet */
            fprintf(stderr, "ozemu shim: interpreter not ready, using fallback\n");
            return;
        }
        py_initialize_ex(0);
        py_owned = 1;
        save_thread();  /* hand the GIL back; every call takes it explicitly */
        atexit(finalize_python);
    }
    int st = gil_ensure();
    PyObj *mod = import_module("ozemu.shim");
    if (mod) {
        cb_dgemm = get_attr(mod, "_c_dgemm");
        cb_zgemm = get_attr(mod, "_c_zgemm");
        dec_ref(mod);
    }
    if (err_occurred())
        err_print();
    py_ready = cb_dgemm && cb_zgemm;
    gil_release(st);
}

static int lsame(char a, char b)
{
    return (a | 0x20) == (b | 0x20);
}

static int max1(int x)
{
    return x > 1 ? x : 1;
}

/* Reference argument checks; returns the illegal parameter index or 0. */
static int check_args(char ta, char tb, int m, int n, int k, int lda, int ldb, int ldc)
{
    int nrowa = lsame(ta, 'N') ? m : k;
    int nrowb = lsame(tb, 'N') ? k : n;
    if (!lsame(ta, 'N') && !lsame(ta, 'T') && !lsame(ta, 'C'))
        return 1;
    if (!lsame(tb, 'N') && !lsame(tb, 'T') && !lsame(tb, 'C'))
        return 2;
    if (m < 0)
        return 3;
    if (n < 0)
        return 4;
    if (k < 0)
        return 5;
    if (lda < max1(nrowa))
        return 8;
    if (ldb < max1(nrowb))
        return 10;
    if (ldc < max1(m))
        return 13;
    return 0;
}

static void xerbla(const char *routine, int info)
{
    fprintf(stderr, " ** On entry to %s parameter number %d had an illegal value\n",
            routine, info);
}

/* Plain loops used when Python is unavailable or re-entered. */
static void fallback_dgemm(char ta, char tb, int m, int n, int k, double alpha,
                           const double *a, int lda, const double *b, int ldb,
                           double beta, double *c, int ldc)
{
    for (int j = 0; j < n; j++)
        for (int i = 0; i < m; i++) {
            double s = 0.0;
            for (int p = 0; p < k; p++) {
                double x = lsame(ta, 'N') ? a[i + (long)p * lda] : a[p + (long)i * lda];
                double y = lsame(tb, 'N') ? b[p + (long)j * ldb] : b[j + (long)p * ldb];
                s += x * y;
            }
            double *cij = &c[i + (long)j * ldc];
            *cij = beta == 0.0 ? alpha * s : alpha * s + beta * *cij;
        }
}

static zdouble zget(const zdouble *x, char t, int r, int col, int ld)
{
    zdouble v = lsame(t, 'N') ? x[r + (long)col * ld] : x[col + (long)r * ld];
    if (lsame(t, 'C'))
        v.im = -v.im;
    return v;
}

static void fallback_zgemm(char ta, char tb, int m, int n, int k, zdouble alpha,
                           const zdouble *a, int lda, const zdouble *b, int ldb,
                           zdouble beta, zdouble *c, int ldc)
{
    for (int j = 0; j < n; j++)
        for (int i = 0; i < m; i++) {
            zdouble s = {0.0, 0.0};
            for (int p = 0; p < k; p++) {
                zdouble x = zget(a, ta, i, p, lda), y = zget(b, tb, p, j, ldb);
                s.re += x.re * y.re - x.im * y.im;
                s.im += x.re * y.im + x.im * y.re;
            }
            zdouble *cij = &c[i + (long)j * ldc];
            zdouble r = {alpha.re * s.re - alpha.im * s.im, alpha.re * s.im + alpha.im * s.re};
            if (beta.re != 0.0 || beta.im != 0.0) {
                r.re += beta.re * cij->re - beta.im * cij->im;
                r.im += beta.re * cij->im + beta.im * cij->re;
            }
            *cij = r;
        }
}

/* Runs a Python callback; evaluates to its integer result, or -1 on failure. */
#define CALL_PY(fn, fmt, ...)                                            \
    ({                                                                   \
        long rc_ = -1;                                                   \
        int st_ = gil_ensure();                                          \
        PyObj *res_ = call_function(fn, fmt, __VA_ARGS__);               \
        if (res_) {                                                      \
            rc_ = long_as_long(res_);                                    \
            dec_ref(res_);                                               \
        }                                                                \
        if (err_occurred()) {                                            \
            err_print();                                                 \
            rc_ = -1;                                                    \
        }                                                                \
        gil_release(st_);                                                \
        rc_;                                                             \
    })

void dgemm_(const char *transa, const char *transb, const int *m, const int *n,
            const int *k, const double *alpha, const double *a, const int *lda,
            const double *b, const int *ldb, const double *beta, double *c,
            const int *ldc)
{
    int info = check_args(*transa, *transb, *m, *n, *k, *lda, *ldb, *ldc);
    if (info) {
        xerbla("DGEMM ", info);
        return;
    }
    pthread_once(&init_once, init_python);
    if (py_ready && !in_shim) {
        in_shim = 1;
        long rc = CALL_PY(cb_dgemm, "CCiiidKiKidKi", *transa, *transb, *m, *n, *k, *alpha,
                          (unsigned long long)(size_t)a, *lda, (unsigned long long)(size_t)b,
                          *ldb, *beta, (unsigned long long)(size_t)c, *ldc);
        in_shim = 0;
        if (rc == 0)
            return;
        fprintf(stderr, "ozemu shim: dgemm callback failed, using fallback\n");
    }
    fallback_dgemm(*transa, *transb, *m, *n, *k, *alpha, a, *lda, b, *ldb, *beta, c, *ldc);
}

void zgemm_(const char *transa, const char *transb, const int *m, const int *n,
            const int *k, const zdouble *alpha, const zdouble *a, const int *lda,
            const zdouble *b, const int *ldb, const zdouble *beta, zdouble *c,
            const int *ldc)
{
    int info = check_args(*transa, *transb, *m, *n, *k, *lda, *ldb, *ldc);
    if (info) {
        xerbla("ZGEMM ", info);
        return;
    }
    pthread_once(&init_once, init_python);
    if (py_ready && !in_shim) {
        in_shim = 1;
        long rc = CALL_PY(cb_zgemm, "CCiiiddKiKiddKi", *transa, *transb, *m, *n, *k,
                          alpha->re, alpha->im, (unsigned long long)(size_t)a, *lda,
                          (unsigned long long)(size_t)b, *ldb, beta->re, beta->im,
                          (unsigned long long)(size_t)c, *ldc);
        in_shim = 0;
        if (rc == 0)
            return;
        fprintf(stderr, "ozemu shim: zgemm callback failed, using fallback\n");
    }
    fallback_zgemm(*transa, *transb, *m, *n, *k, *alpha, a, *lda, b, *ldb, *beta, c, *ldc);
}

void dgemm(const char *transa, const char *transb, const int *m, const int *n,
           const int *k, const double *alpha, const double *a, const int *lda,
           const double *b, const int *ldb, const double *beta, double *c,
           const int *ldc)
{
    dgemm_(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void zgemm(const char *transa, const char *transb, const int *m, const int *n,
           const int *k, const zdouble *alpha, const zdouble *a, const int *lda,
           const zdouble *b, const int *ldb, const zdouble *beta, zdouble *c,
           const int *ldc)
{
    zgemm_(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
