// All state lives on the server; this page only renders /tasks and posts /judgments.
let annotator = localStorage.getItem('annotator') || '';
let current = null;

const $ = (id) => document.getElementById(id);

function banner(text) {
  $('banner').textContent = text;
  $('banner').hidden = !text;
}

async function refresh() {
  if (!annotator) return;
  try {
    const res = await fetch('/tasks?annotator=' + encodeURIComponent(annotator) + '&limit=1');
    const body = await res.json();
    if (!res.ok) throw new Error(body.error || res.statusText);
    banner('');
    $('progress').textContent = body.done + '/' + body.total;
    current = body.next;
    $('task').hidden = !current;
    $('finished').hidden = !!current;
    if (current) {
      $('description').textContent = current.task_description;
      $('query').textContent = current.query_text;
      $('example').textContent = current.example_text;
    } else {
      $('summary').textContent = body.total ? 'Judged ' + body.done + ' of ' + body.total + '.' : '';
    }
  } catch (e) {
    banner('Cannot reach the server (' + e.message + '). Retrying...');
    setTimeout(refresh, 3000);
  }
}

async function submit(relevant) {
  if (!current) return;
  try {
    const res = await fetch('/judgments', {
      method: 'POST',
      headers: {'Content-Type': 'application/json'},
      body: JSON.stringify({task_id: current.task_id, relevant: relevant, annotator: annotator}),
    });
    const body = await res.json();
    if (res.status === 409) banner(body.warning);
    else if (!res.ok) banner(body.error || res.statusText);
  } catch (e) {
    banner('Submission failed (' + e.message + '); the task stays pending.');
  }
  refresh();
}

$('who').addEventListener('submit', (ev) => {
  ev.preventDefault();
  annotator = $('annotator').value.trim();
  localStorage.setItem('annotator', annotator);
  refresh();
});
$('yes').addEventListener('click', () => submit(true));
$('no').addEventListener('click', () => submit(false));
document.addEventListener('keydown', (ev) => {
  if (ev.target.tagName === 'INPUT') return;
  if (ev.key === '1') submit(true);
  if (ev.key === '0') submit(false);
});

$('annotator').value = annotator;
refresh();
