(function () {
  if (window.__a11yfix && window.__a11yfix.version) return;
  var SNIPPET_LIMIT = 4096;
  var state = { installed: false, last_mutation_epoch_ms: Date.now(), pending_requests: 0, mutation_count: 0 };

  function settle() { state.pending_requests = Math.max(0, state.pending_requests - 1); }

  function installProbe() {
    if (state.installed) return JSON.stringify(readState());
    new MutationObserver(function (records) {
      state.mutation_count += records.length;
      state.last_mutation_epoch_ms = Date.now();
    }).observe(document, { subtree: true, childList: true, attributes: true, characterData: true });
    if (window.fetch) {
      var origFetch = window.fetch;
      window.fetch = function () {
        state.pending_requests += 1;
        return origFetch.apply(this, arguments).then(
          function (r) { settle(); return r; },
          function (e) { settle(); throw e; });
      };
    }
    var origSend = XMLHttpRequest.prototype.send;
    XMLHttpRequest.prototype.send = function () {
      state.pending_requests += 1;
      this.addEventListener('loadend', settle);
      return origSend.apply(this, arguments);
    };
    state.installed = true;
    return JSON.stringify(readState());
  }

  function readState() {
    return {
      installed: state.installed,
      last_mutation_epoch_ms: state.last_mutation_epoch_ms,
      pending_requests: state.pending_requests,
      mutation_count: state.mutation_count,
      now_epoch_ms: Date.now(),
      ready_state: document.readyState
    };
  }

  function readProbe() {
    if (!state.installed) return JSON.stringify({ installed: false });
    return JSON.stringify(readState());
  }

  function criterionTag(tags) {
    for (var i = 0; i < tags.length; i++) {
      if (/^wcag\d{3,}$/.test(tags[i])) return tags[i];
    }
    return '';
  }

  function runAuditSerialize(scopeTags) {
    if (!window.axe || !window.axe.run) return Promise.resolve(JSON.stringify({ error: 'audit bundle missing' }));
    return window.axe.run(document, { runOnly: { type: 'tag', values: scopeTags } }).then(function (results) {
      var out = [];
      results.violations.forEach(function (rule) {
        rule.nodes.forEach(function (node) {
          var target = node.target && node.target[node.target.length - 1];
          if (!target || typeof target !== 'string') return;
          out.push({
            rule_id: rule.id,
            criterion_tag: criterionTag(rule.tags),
            impact: node.impact || rule.impact || '',
            css_selector: target,
            snippet: (node.html || '').slice(0, SNIPPET_LIMIT),
            help_text: node.failureSummary || rule.help || ''
          });
        });
      });
      return JSON.stringify(out);
    }, function (e) {
      return JSON.stringify({ error: String(e && e.message || e) });
    });
  }

  window.__a11yfix = { version: 1, installProbe: installProbe, readProbe: readProbe, runAuditSerialize: runAuditSerialize };
})();
