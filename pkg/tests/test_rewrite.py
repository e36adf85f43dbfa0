import pytest

from proxysleuth.errors import InsufficientSweep, MixedObjects
from proxysleuth.liveservers import OriginApp, default_manifest
from proxysleuth.rewrite import (
    ContentClass, ContentObservation, ObjectRef, RewriteClass, classify_content,
    classify_rewrite, eligible_objects, extract_embedded_objects, transcoding_profile,
)

KB = 1024


def test_classify_content():
    assert classify_content("http://x/a.JPG") is ContentClass.JPG
    assert classify_content("http://x/a.jpeg?v=1") is ContentClass.JPG
    assert classify_content("http://x/a", "text/css; charset=utf-8") is ContentClass.CSS
    # content type wins over the extension
    assert classify_content("http://x/a.png", "image/gif") is ContentClass.GIF
    assert classify_content("http://x/font.woff") is ContentClass.OTHER


def test_extract_single_image():
    refs = extract_embedded_objects('<img src="/a.jpg">', "http://s.example")
    assert refs == [ObjectRef("http://s.example/a.jpg", ContentClass.JPG)]


def test_extract_dedup_and_filters():
    html = """<html><head><link rel="stylesheet" href="s.css"><link rel="icon" href="f.ico">
    <script src="app.js"></script><script src="app.js"></script></head>
    <body><img src="data:image/png;base64,AAAA"><img src="//cdn.example/p.png"><img></body></html>"""
    urls = [r.url for r in extract_embedded_objects(html, "https://s.example/dir/page.html")]
    assert urls == ["https://s.example/dir/s.css", "https://s.example/dir/app.js",
                    "https://cdn.example/p.png"]


def test_extract_matches_origin_manifest():
    manifest = [s for s in default_manifest() if s.content_class is not ContentClass.HTML][:6]
    page = OriginApp(manifest).index_page()
    refs = extract_embedded_objects(page, "http://origin.sim/")
    assert sorted(r.url for r in refs) == sorted("http://origin.sim" + s.path for s in manifest)
    assert len(refs) == 6


def test_extract_tolerates_garbage():
    assert extract_embedded_objects(b"\xff\xfe<<img src=", "http://x/") == []


@pytest.mark.parametrize("url, size, kept", [
    ("http://x/a.css", 4 * KB, False),
    ("http://x/a.css", 6 * KB, True),
    ("http://x/f.woff", 10 * KB, False),
    ("http://x/a.css", 5 * KB, True),
])
def test_eligibility(url, size, kept):
    obj = ObjectRef.from_url(url, expected_size=size)
    assert (eligible_objects([obj]) == [obj]) is kept


def test_unknown_size_kept_and_flagged():
    out = eligible_objects([ObjectRef.from_url("http://x/a.js")])
    assert out[0].size_unknown


def obs(digest, port=80, url="http://x/a.jpg", length=100, status=200, headers=()):
    return ContentObservation(ObjectRef.from_url(url), port, digest, length, "image/jpeg",
                              tuple(headers), 1.0, status)


def test_proxy_rewritten():
    v = classify_rewrite(obs("Y", 80, length=50), obs("X", 443), obs("X", 80), obs("X", 443))
    assert v.classification is RewriteClass.PROXY_REWRITTEN
    assert v.evidence.length_delta == -50 and v.evidence.digest_mismatch


def test_server_differentiated_regardless():
    for cell80 in ("X", "Y", "Z"):
        v = classify_rewrite(obs(cell80), obs("X", 443), obs("X"), obs("W", 443))
        assert v.classification is RewriteClass.SERVER_DIFFERENTIATED


def test_no_rewrite():
    v = classify_rewrite(obs("X"), obs("X", 443), obs("X"), obs("X", 443))
    assert v.classification is RewriteClass.NO_REWRITE and not v.header_only


def test_header_only_change_is_reported_not_classified():
    v = classify_rewrite(obs("X", headers=[("Via", "1.1 proxy")]), obs("X", 443),
                         obs("X"), obs("X", 443))
    assert v.classification is RewriteClass.NO_REWRITE
    assert v.header_only and v.evidence.changed_headers == ("Via",)


def test_inconclusive_cases():
    assert classify_rewrite(None, obs("X", 443), obs("X"), obs("X", 443)).classification \
        is RewriteClass.INCONCLUSIVE
    assert classify_rewrite(obs("X", status=502), obs("X", 443), obs("X"), obs("X", 443)) \
        .classification is RewriteClass.INCONCLUSIVE
    assert classify_rewrite(obs("Y"), obs("X", 443)).classification is RewriteClass.INCONCLUSIVE
    only = ObjectRef.from_url("http://x/a.jpg")
    assert classify_rewrite(None, None, obj=only).classification is RewriteClass.INCONCLUSIVE


def test_mixed_objects():
    with pytest.raises(MixedObjects):
        classify_rewrite(obs("X"), obs("X", 443, url="http://x/b.jpg"))
    with pytest.raises(MixedObjects):
        classify_rewrite(None, None)


def sweep(sizes, observed):
    originals, seen = [], []
    for size, out in zip(sizes, observed):
        url = f"http://x/{size}.jpg"
        originals.append((size, obs("o", 443, url, size)))
        seen.append((size, obs("s", 80, url, out)))
    return originals, seen


def test_profile_brackets_threshold():
    sizes = [100 * KB, 500 * KB, 800 * KB, 1024 * KB]
    prof = transcoding_profile(*sweep(sizes, [50 * KB, 250 * KB, 800 * KB, 1024 * KB]))
    assert (prof.lower_bound, prof.threshold) == (500 * KB, 800 * KB)
    assert prof.to_csv().splitlines()[0] == b"original_size,observed_size"


def test_profile_identity_when_off():
    sizes = [100 * KB, 500 * KB, 800 * KB]
    prof = transcoding_profile(*sweep(sizes, sizes))
    assert all(a == b for a, b in prof.mapping)
    assert prof.lower_bound is None and prof.threshold == 100 * KB


def test_profile_needs_three_sizes():
    with pytest.raises(InsufficientSweep):
        transcoding_profile(*sweep([1, 2], [1, 2]))
